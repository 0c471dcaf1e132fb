"""One test per acceptance criterion; each records a PASS/FAIL line with
the measured values (printed in the terminal summary)."""

import time
from math import comb

import numpy as np
import pytest

from taylormap.baselines import mean_rel_err, rk4_fixed
from taylormap.mapbuilder import BuildConfig, build_map
from taylormap.odemodel import DeflectorParams, deflector, make_system, van_der_pol
from taylormap.pnn import compose
from taylormap.polyalg import monomial_basis
from taylormap.scenarios import (
    BurgersConfig,
    DeflectorConfig,
    RPConfig,
    burgers_benchmark,
    deflector_benchmark,
    random_disc,
    rp_benchmark,
    vdp_dataset,
)
from taylormap.training import (
    BinaryMask,
    DataSet,
    _chain,
    design_matrix,
    fine_tune_residual,
    fit_gradient,
    fit_least_squares,
)

PRINTED_DEFLECTOR = {
    1: [[0.44, 0.63], [-1.3, 0.44]],
    2: [[0.023, 0.012, 0.0026], [0.040, 0.035, 0.012]],
    3: [[2.1e-4, 1.7e-4, 4.7e-5, 5.6e-6], [8.3e-4, 9.5e-4, 3.2e-4, 4.7e-5]],
}


def two_digits(a):
    return np.vectorize(lambda v: float(f"{v:.2g}"))(np.asarray(a))


@pytest.fixture(scope="module")
def burgers():
    return burgers_benchmark(BurgersConfig(repeats=3))


def test_criterion_01_deflector_printed_map(accept):
    t0 = time.perf_counter()
    m = build_map(deflector(DeflectorParams(R=10.0)), BuildConfig(3, np.pi / 4, 100))
    elapsed = time.perf_counter() - t0
    W = m.weights.coeffs
    match = all(np.array_equal(two_digits(W[k]), np.array(v, float)) for k, v in PRINTED_DEFLECTOR.items())
    match = match and not W[0].any()
    accept(1, match and elapsed < 1.0,
           f"W1..W3 match printed map to two digits: {match}; build {elapsed:.3f} s (< 1 s)")


def test_criterion_02_deflector_accuracy(accept):
    t0 = time.perf_counter()
    s = deflector()
    m = build_map(s, BuildConfig(3, np.pi / 4, 100))
    X = random_disc(100, 0.3, seed=2)
    err = float(np.max(np.abs(m(X) - rk4_fixed(s, X, np.pi / 4, 30).final)))
    elapsed = time.perf_counter() - t0
    accept(2, err <= 1e-4 and elapsed < 1.0, f"max |map - RK4(30)| = {err:.2e} (<= 1e-4) over 100 x0; {elapsed:.3f} s")


def test_criterion_03_deflector_speed(accept):
    t0 = time.perf_counter()
    rows, info = deflector_benchmark(DeflectorConfig(samples=100_000, repeats=3))
    elapsed = time.perf_counter() - t0
    sp = info["speedup"]
    accept(3, sp >= 10 and elapsed < 30,
           f"map {rows[0].elapsed * 1e3:.1f} ms vs RK4 {rows[1].elapsed * 1e3:.1f} ms on 1e5 samples: "
           f"{sp:.1f}x (>= 10x); {elapsed:.1f} s")


def test_criterion_04_burgers_table(accept, burgers):
    t0 = time.perf_counter()
    rows, info = burgers
    r = {row.label: row for row in rows}
    fdm, pnn = r["fdm u1"], r["pnn u1"]
    ok = (2.5e-2 <= fdm.error <= 2.4e-1 and 1.8e-3 <= pnn.error <= 1.7e-2
          and pnn.error < fdm.error and pnn.elapsed < fdm.elapsed)
    accept(4, ok,
           f"FDM MSE {fdm.error:.2e} in [2.5e-2, 2.4e-1], {fdm.elapsed:.3f} s; "
           f"PNN MSE {pnn.error:.2e} in [1.8e-3, 1.7e-2], {pnn.elapsed:.3f} s")


def test_criterion_05_burgers_second_solution(accept, burgers):
    rows, _ = burgers
    err = {row.label: row for row in rows}["pnn u2"].error
    accept(5, err <= 1e-6, f"PNN (same map) MSE on u2 = {err:.2e} (<= 1e-6)")


@pytest.mark.slow
def test_criterion_06_rayleigh_plesset(accept):
    t0 = time.perf_counter()
    _, info = rp_benchmark(RPConfig(repeats=3))
    elapsed = time.perf_counter() - t0
    runs = info["runs"]
    worst = max(r["max_rel_err"] for r in runs)
    ok = worst <= 1e-3 and all(r["map_time"] <= r["rk45_time"] for r in runs) and elapsed < 300
    detail = "; ".join(f"R0={r['R0']:.3g}: err {r['max_rel_err']:.1e}, rk45/map {r['ratio']:.1f}x" for r in runs)
    accept(6, ok, f"{detail}; family build {info['family_build_time']:.1f} s; total {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_07_vdp_learning(accept):
    t0 = time.perf_counter()
    dt, T = 2e-5, 7.0
    data = vdp_dataset((-2.0, 4.0), dt, T)
    rep = fit_least_squares(data, 3)
    starts = np.array([(-2.0, 4.0), (1.0, 2.0), (2.0, -2.0), (-3.0, -3.0)])
    steps = int(round(T / dt))
    ref = rk4_fixed(van_der_pol(), starts, steps * dt, steps).states
    W = rep.weights.stacked()
    z, pred = starts, [starts]
    for _ in range(steps):
        z = design_matrix(z, 3) @ W.T
        pred.append(z)
    pred = np.array(pred)
    errs = [mean_rel_err(pred[:, j], ref[:, j]) for j in range(len(starts))]
    elapsed = time.perf_counter() - t0
    accept(7, all(e <= 1e-3 for e in errs) and elapsed < 120,
           f"mean rel err train {errs[0]:.1e}, unseen " + ", ".join(f"{e:.1e}" for e in errs[1:])
           + f" (<= 1e-3); dt {dt:g}; {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_08_qubo_regularization(accept):
    t0 = time.perf_counter()
    data = vdp_dataset((-2.0, 4.0), 0.01, 7.0)
    kw = dict(epochs=300, step=3e-3, seed=0, target_loss=1e-6)
    plain = fit_gradient(data, 3, regularizer="none", **kw)
    qubo = fit_gradient(data, 3, regularizer="qubo", **kw)
    e_plain, e_qubo = plain.epochs_to(1e-6), qubo.epochs_to(1e-6)
    fewer = e_qubo is not None and (e_plain is None or e_qubo < e_plain)
    truth = BinaryMask.support(build_map(van_der_pol(), BuildConfig(3, 0.01, 100)).weights)
    same = qubo.mask == truth
    elapsed = time.perf_counter() - t0
    accept(8, fewer and same and elapsed < 300,
           f"epochs to 1e-6: qubo {e_qubo} vs none {e_plain} (fewer: {fewer}); "
           f"mask support == builder support: {same} (mask nnz {qubo.mask.popcount()}, "
           f"builder nnz {truth.popcount()}); {elapsed:.1f} s")


def test_criterion_09_property_suite(accept):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    import scipy.linalg

    checks = {}
    A = rng.standard_normal((3, 3))
    A -= (np.abs(np.linalg.eigvals(A).real).max() + 0.1) * np.eye(3)
    lin = build_map(make_system(3, [np.zeros((3, 1)), A]), BuildConfig(1, 0.7, 200))
    checks["expm"] = np.abs(lin.weights.coeffs[1] - scipy.linalg.expm(0.7 * A)).max() <= 1e-10

    B = 0.5 * rng.standard_normal((2, 2))
    sysB = make_system(2, [np.zeros((2, 1)), B])
    half, full = build_map(sysB, BuildConfig(3, 0.2)), build_map(sysB, BuildConfig(3, 0.4))
    checks["semigroup"] = compose(half, half).weights.allclose(full.weights, atol=1e-11)

    H = lambda z: z[..., 1] ** 2 / 2 + z[..., 0] ** 2 - z[..., 0] ** 3 / 30
    m = build_map(deflector(), BuildConfig(3, np.pi / 4))
    X = random_disc(500, 0.3, 9)
    checks["hamiltonian"] = np.abs(H(m(X)) - H(X)).max() <= 1e-5

    s = van_der_pol()
    ref = rk4_fixed(s, [2.0, 0.0], 1.0, 4000).final
    steps = np.array([10, 20, 40, 80])
    errs = [np.abs(rk4_fixed(s, [2.0, 0.0], 1.0, n).final - ref).max() for n in steps]
    slope = -np.polyfit(np.log(steps), np.log(errs), 1)[0]
    checks["rk4 slope"] = 3.8 <= slope <= 4.2

    Xd = rng.uniform(-1, 1, (300, 2))
    d = DataSet(Xd, np.tanh(Xd) + 0.2 * Xd[:, ::-1] ** 2)
    checks["lstsq optimal"] = fit_least_squares(d, 2).final_loss <= fit_gradient(d, 2, 30, 1e-2).final_loss

    checks["basis size"] = all(
        monomial_basis(n, k).size == comb(n + k - 1, k) for n in range(1, 6) for k in range(8)
    )
    elapsed = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    accept(9, not failed and elapsed < 60,
           f"{len(checks) - len(failed)}/{len(checks)} properties hold (RK4 slope {slope:.2f})"
           + (f"; failed: {failed}" if failed else "") + f"; {elapsed:.1f} s")


def test_criterion_10_residual_fine_tuning(accept):
    t0 = time.perf_counter()
    s = deflector(DeflectorParams(R=0.3))
    span, layers, x0 = np.pi / 120, 30, np.array([0.3, 0.0])
    m = build_map(s, BuildConfig(2, span, 100))
    ref = rk4_fixed(s, x0, span * layers, layers * 50).states[::50]
    before = np.abs(_chain(m.weights, x0, layers) - ref).max()
    rep = fine_tune_residual(m, s, x0, layers, sweeps=4)
    after = np.abs(_chain(rep.weights, x0, layers) - ref).max()
    elapsed = time.perf_counter() - t0
    accept(10, before / after >= 2 and elapsed < 120,
           f"trajectory error {before:.2e} -> {after:.2e} ({before / after:.1f}x, >= 2x); {elapsed:.1f} s")
