import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from taylormap.odemodel import (
    BurgersGrid,
    DeflectorParams,
    RayleighPlessetParams,
    burgers_semidiscrete,
    deflector,
    eval_rhs,
    make_system,
    periodic_laplacian,
    rayleigh_plesset,
    system_from_label,
    van_der_pol,
)

from conftest import unit_ball


class TestMakeSystem:
    def test_scalar_growth(self):
        s = make_system(1, [[[0.0]], [[1.0]]])
        assert eval_rhs(s, [1.0]) == pytest.approx([1.0])

    def test_deflector_blocks(self):
        s = make_system(2, [np.zeros((2, 1)), [[0, 1], [-2, 0]], [[0, 0, 0], [0.1, 0, 0]]])
        np.testing.assert_allclose(eval_rhs(s, [1.0, 0.0]), [0.0, -1.9])

    def test_zero_blocks(self, rng):
        s = make_system(3, [np.zeros((3, 1)), np.zeros((3, 3)), np.zeros((3, 6))])
        assert not eval_rhs(s, rng.standard_normal((10, 3))).any()

    def test_bad_shape(self):
        with pytest.raises(ValueError, match="degree-1"):
            make_system(2, [np.zeros((2, 1)), np.zeros((2, 3))])

    def test_state_length_checked(self):
        with pytest.raises(ValueError):
            eval_rhs(van_der_pol(), [1.0, 2.0, 3.0])


class TestDeflector:
    def test_values(self):
        s = deflector(DeflectorParams(R=10.0))
        np.testing.assert_allclose(s([1.0, 0.0]), [0.0, -1.9])
        np.testing.assert_allclose(s([0.0, 1.0]), [1.0, 0.0])

    @pytest.mark.parametrize("x", [0.1, 0.5])
    def test_quadratic_block(self, x):
        np.testing.assert_allclose(deflector()([x, 0.0]), [0.0, -2 * x + x * x / 10.0], atol=1e-15)

    def test_formula_on_ball(self, rng):
        s = deflector(DeflectorParams(R=3.0))
        X = unit_ball(rng, 100, 2)
        expected = np.column_stack([X[:, 1], -2 * X[:, 0] + X[:, 0] ** 2 / 3.0])
        np.testing.assert_allclose(s(X), expected, atol=1e-14)

    def test_large_radius_is_oscillator(self, rng):
        s = deflector(DeflectorParams(R=1e12))
        X = unit_ball(rng, 50, 2)
        np.testing.assert_allclose(s(X), X @ np.array([[0, 1], [-2, 0]]).T, atol=1e-10)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            DeflectorParams(R=0.0)


class TestRayleighPlesset:
    def test_initial_rates(self):
        p = RayleighPlessetParams()
        d = rayleigh_plesset(p)(p.initial_state)
        assert d[0] == 0.0 and d[2] == 0.0
        # R'' = dp/(rho R) for the physical form
        assert d[1] == pytest.approx((p.p_B - p.p_inf) / p.rho / p.R0, rel=1e-14)

    def test_printed_form(self):
        p = RayleighPlessetParams()
        d = rayleigh_plesset(p, form="printed")(p.initial_state)
        assert d[1] == pytest.approx(-(p.p_B - p.p_inf) / p.rho / p.R0, rel=1e-14)

    @pytest.mark.parametrize("form", ["physical", "printed"])
    def test_equilibrium(self, form):
        p = RayleighPlessetParams(p_B=1e5, p_inf=1e5)
        np.testing.assert_array_equal(rayleigh_plesset(p, form)([1e-3, 0.0, 1e3]), 0.0)

    def test_formula_on_ball(self, rng):
        p = RayleighPlessetParams()
        dp = (p.p_B - p.p_inf) / p.rho
        Y = unit_ball(rng, 100, 3)
        y1, y2, y3 = Y.T
        expected = np.column_stack([y2, dp * y3 - 1.5 * y2**2 * y3, -(y3**2) * y2])
        np.testing.assert_allclose(rayleigh_plesset(p)(Y), expected, rtol=1e-14, atol=1e-14 * abs(dp))

    def test_unknown_form(self):
        with pytest.raises(ValueError):
            rayleigh_plesset(form="other")


class TestVanDerPol:
    @pytest.mark.parametrize(
        "x,expected", [((0, 0), (0, 0)), ((1, 1), (1, -1)), ((2, 1), (1, -5))]
    )
    def test_values(self, x, expected):
        np.testing.assert_allclose(van_der_pol()(np.array(x, float)), expected)

    def test_structure(self):
        s = van_der_pol()
        np.testing.assert_array_equal(s.rhs.coeffs[1], [[0, 1], [-1, 1]])
        np.testing.assert_array_equal(s.rhs.coeffs[3], [[0, 0, 0, 0], [0, -1, 0, 0]])

    @given(st.floats(-2, 2), st.floats(-2, 2))
    def test_formula(self, x, y):
        np.testing.assert_allclose(van_der_pol()([x, y]), [y, y - x - x * x * y], atol=1e-14)


class TestBurgers:
    def test_rejects_small_grid(self):
        with pytest.raises(ValueError):
            BurgersGrid(N=2)

    def test_constant_field(self):
        g = BurgersGrid(N=50)
        s = burgers_semidiscrete(g)
        d = s(np.r_[g.x_nodes, np.full(50, 1.5)])
        np.testing.assert_allclose(d[:50], 1.5)
        np.testing.assert_allclose(d[50:], 0.0, atol=1e-9)

    def test_spike_stencil(self):
        g = BurgersGrid(N=20)
        L = periodic_laplacian(g.N, g.dx).toarray()
        e = np.zeros(20)
        e[0] = 1.0
        v = L @ e
        assert v[0] == pytest.approx(-2 / g.dx**2)
        assert v[1] == pytest.approx(1 / g.dx**2)
        assert v[-1] == pytest.approx(1 / g.dx**2)

    def test_sine_eigenfunction(self):
        g = BurgersGrid(N=1000, nu=0.05)
        s = burgers_semidiscrete(g)
        d = s(np.r_[g.x_nodes, np.sin(g.x_nodes)])[1000:]
        err = np.max(np.abs(d + g.nu * np.sin(g.x_nodes)))
        assert err <= g.nu * g.dx**2 / 12 * 1.01

    def test_laplacian_properties(self):
        L = periodic_laplacian(40, 0.1)
        assert abs(L - L.T).max() == 0
        np.testing.assert_allclose(np.asarray(L.sum(axis=1)).ravel(), 0.0, atol=1e-9)
        assert np.linalg.eigvalsh(L.toarray()).max() <= 1e-9

    def test_sparse_linear(self):
        s = burgers_semidiscrete(BurgersGrid(N=10))
        assert s.is_sparse_linear and s.order == 1 and sp.issparse(s.linear_operator)

    def test_dirichlet_rows_frozen(self):
        g = BurgersGrid(N=10, boundary="dirichlet")
        d = burgers_semidiscrete(g)(np.r_[g.x_nodes, np.sin(g.x_nodes)])
        assert d[10] == 0.0 and d[19] == 0.0


class TestLabels:
    def test_lookup(self):
        assert system_from_label("deflector", R=5.0).params.R == 5.0
        assert system_from_label("rp").dim == 3
        assert system_from_label("vdp").label == "vdp"
        assert system_from_label("burgers", N=8).dim == 16

    def test_unknown(self):
        with pytest.raises(ValueError):
            system_from_label("lorenz")

    def test_bad_param(self):
        with pytest.raises(TypeError):
            system_from_label("vdp", mu=1.0)
