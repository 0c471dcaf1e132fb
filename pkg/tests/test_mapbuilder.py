import json

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from taylormap.errors import MapBuildError
from taylormap.mapbuilder import (
    AdaptiveMapFamily,
    BuildConfig,
    TaylorMap,
    build_map,
    build_map_family,
    coefficient_rhs,
    decade_spans,
)
from taylormap.odemodel import BurgersGrid, burgers_semidiscrete, deflector, make_system, van_der_pol
from taylormap.polyalg import PolyMap
from taylormap.pnn import compose
from taylormap.baselines import rk4_fixed

from conftest import random_polymap, unit_ball


def expm_series(A, t):
    """Scaling and squaring with a 20-term Taylor series."""
    M = A * t
    s = max(0, int(np.ceil(np.log2(max(np.linalg.norm(M, 1), 1e-300)))) + 1)
    M = M / 2**s
    E, term = np.eye(len(A)), np.eye(len(A))
    for k in range(1, 21):
        term = term @ M / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def linear_system(A):
    n = len(A)
    return make_system(n, [np.zeros((n, 1)), A])


class TestCoefficientRhs:
    def test_identity_gives_rhs(self):
        s = van_der_pol()
        d = coefficient_rhs(s, PolyMap.identity(2, 3))
        assert d.allclose(s.rhs.truncated(3))

    def test_zero_system(self, rng):
        s = make_system(2, [np.zeros((2, 1)), np.zeros((2, 2)), np.zeros((2, 3))])
        d = coefficient_rhs(s, random_polymap(rng, 2, 2, 3))
        assert all(not b.any() for b in d.coeffs)

    def test_linear(self, rng):
        A, M = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        d = coefficient_rhs(linear_system(A), PolyMap((np.zeros((3, 1)), M), 3))
        np.testing.assert_allclose(d.coeffs[1], A @ M, atol=1e-14)


class TestBuildMap:
    def test_zero_system_identity(self):
        s = make_system(2, [np.zeros((2, 1)), np.zeros((2, 2))])
        m = build_map(s, BuildConfig(3, 7.0, 10))
        assert m.weights.allclose(PolyMap.identity(2, 3))

    def test_oscillator_closed_form(self):
        A = np.array([[0.0, 1.0], [-2.0, 0.0]])
        t = np.pi / 4
        m = build_map(linear_system(A), BuildConfig(1, t))
        w = np.sqrt(2) * t
        expected = [[np.cos(w), np.sin(w) / np.sqrt(2)], [-np.sqrt(2) * np.sin(w), np.cos(w)]]
        np.testing.assert_allclose(m.weights.coeffs[1], expected, atol=1e-10)
        np.testing.assert_allclose(expected, [[0.4440, 0.6336], [-1.2672, 0.4440]], atol=1e-4)

    def test_deflector_printed_map(self):
        m = build_map(deflector(), BuildConfig(3, np.pi / 4, 100))
        W = m.weights.coeffs
        printed = {
            1: [[0.44, 0.63], [-1.3, 0.44]],
            2: [[0.023, 0.012, 0.0026], [0.040, 0.035, 0.012]],
            3: [[2.1e-4, 1.7e-4, 4.7e-5, 5.6e-6], [8.3e-4, 9.5e-4, 3.2e-4, 4.7e-5]],
        }
        for k, vals in printed.items():
            got = np.vectorize(lambda v: float(f"{v:.2g}"))(W[k])
            np.testing.assert_allclose(got, vals, rtol=1e-12)
        assert not W[0].any()

    @settings(max_examples=15)
    @given(st.integers(0, 10_000), st.floats(0.05, 1.0))
    def test_matches_matrix_exponential(self, seed, t):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((3, 3))
        A -= (np.abs(np.linalg.eigvals(A).real).max() + 0.1) * np.eye(3)
        m = build_map(linear_system(A), BuildConfig(1, t, 200))
        np.testing.assert_allclose(m.weights.coeffs[1], expm_series(A, t), atol=1e-10)
        np.testing.assert_allclose(expm_series(A, t), scipy.linalg.expm(A * t), atol=1e-12)

    def test_divergence_reported(self):
        s = make_system(1, [[[0.0]], [[0.0]], [[1.0]]])
        with pytest.raises(MapBuildError, match="substep"):
            build_map(s, BuildConfig(6, 1000.0, 10))

    def test_jacobian_at_origin(self):
        m = build_map(deflector(), BuildConfig(3, np.pi / 4))
        h = 1e-6
        J = np.column_stack([(m(h * e) - m(-h * e)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(J, m.weights.coeffs[1], atol=1e-8)

    def test_accuracy_in_trust_radius(self, rng):
        s = deflector()
        m = build_map(s, BuildConfig(3, np.pi / 4))
        X = 0.5 * unit_ball(rng, 50, 2)
        ref = rk4_fixed(s, X, np.pi / 4, 400).final
        assert np.abs(m(X) - ref).max() <= 1e-3
        X = 0.3 * unit_ball(rng, 50, 2)
        ref = rk4_fixed(s, X, np.pi / 4, 400).final
        assert np.abs(m(X) - ref).max() <= 1e-4

    def test_hamiltonian_conserved(self, rng):
        R = 10.0
        H = lambda z: z[..., 1] ** 2 / 2 + z[..., 0] ** 2 - z[..., 0] ** 3 / (3 * R)
        m = build_map(deflector(), BuildConfig(3, np.pi / 4))
        X = 0.3 * unit_ball(rng, 200, 2)
        assert np.abs(H(m(X)) - H(X)).max() <= 1e-5

    def test_semigroup(self):
        s = deflector()
        for tau, bound in [(0.2, 1e-3), (0.1, 1e-4)]:
            half = build_map(s, BuildConfig(3, tau))
            full = build_map(s, BuildConfig(3, 2 * tau))
            diff = max(np.abs(a - b).max() for a, b in zip(compose(half, half).weights.coeffs, full.weights.coeffs))
            assert diff < bound

    def test_semigroup_linear_exact(self, rng):
        A = rng.standard_normal((3, 3)) * 0.5
        half = build_map(linear_system(A), BuildConfig(2, 0.3))
        full = build_map(linear_system(A), BuildConfig(2, 0.6))
        assert compose(half, half).weights.allclose(full.weights, atol=1e-11)

    def test_sparse_burgers_matches_dense(self):
        g = BurgersGrid(N=12, nu=0.05)
        s = burgers_semidiscrete(g)
        m = build_map(s, BuildConfig(1, 1e-2, 20))
        assert m.is_sparse
        np.testing.assert_allclose(m.sparse_linear.toarray(), scipy.linalg.expm(s.linear_operator.toarray() * 1e-2), atol=1e-12)


class TestSerialisation:
    def test_dense_round_trip(self):
        m = build_map(deflector(), BuildConfig(3, np.pi / 4))
        back = TaylorMap.from_dict(json.loads(json.dumps(m.to_dict())))
        assert back.t_span == m.t_span and back.weights.allclose(m.weights, atol=0)

    def test_sparse_round_trip(self):
        m = build_map(burgers_semidiscrete(BurgersGrid(N=8)), BuildConfig(1, 1e-3, 5))
        back = TaylorMap.from_dict(json.loads(json.dumps(m.to_dict())))
        assert (back.sparse_linear != m.sparse_linear).nnz == 0

    def test_exactly_one_representation(self):
        with pytest.raises(ValueError):
            TaylorMap(PolyMap.identity(2), 1.0, sparse_linear=sp.identity(2, format="csr"))


class TestFamily:
    def test_decade_spans(self):
        spans = decade_spans(1e-4, 1e-19)
        assert len(spans) == 16 and spans[0] == 1e-4 and spans[-1] == 1e-19

    def test_sorted_largest_first(self):
        f = build_map_family(deflector(), 2, [0.01, 0.1, 0.001], substeps=5)
        assert f.spans == [0.1, 0.01, 0.001]

    def test_single_span(self):
        assert len(build_map_family(deflector(), 2, [0.1], substeps=5)) == 1

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            build_map_family(deflector(), 2, [0.1, 0.1])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            AdaptiveMapFamily(())

    def test_failure_names_span(self):
        s = make_system(1, [[[0.0]], [[0.0]], [[1.0]]])
        with pytest.raises(MapBuildError, match="span 1000"):
            build_map_family(s, 6, [1000.0, 0.1], substeps=10)
