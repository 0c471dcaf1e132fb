"""The benchmark runs behind ``taylormap benchmark`` and the acceptance suite.

Each function returns plain dictionaries (JSON-ready) plus the
:class:`~taylormap.baselines.BenchResult` rows it timed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .baselines import (
    BenchResult,
    bench,
    burgers_analytic_u1,
    burgers_analytic_u2,
    burgers_fdm,
    mse,
    rk4_fixed,
    rk45_adaptive,
)
from .mapbuilder import BuildConfig, build_map, build_map_family, decade_spans
from .odemodel import (
    BurgersGrid,
    DeflectorParams,
    RayleighPlessetParams,
    burgers_semidiscrete,
    deflector,
    rayleigh_plesset,
    van_der_pol,
)
from .pnn import StopBelow, adaptive_propagate, burgers_propagate
from .training import DataSet

__all__ = [
    "BurgersConfig",
    "DeflectorConfig",
    "RPConfig",
    "burgers_benchmark",
    "deflector_benchmark",
    "rp_benchmark",
    "vdp_dataset",
    "random_disc",
]


@dataclass(frozen=True)
class BurgersConfig:
    N: int = 1000
    nu: float = 0.05
    t_end: float = 0.5
    fdm_dt: float = 2.5e-4
    pnn_dt: float = 1.25e-3
    substeps: int = 10
    boundary: str = "dirichlet"
    repeats: int = 3


def burgers_benchmark(cfg: BurgersConfig = BurgersConfig()) -> tuple[list[BenchResult], dict]:
    """FDM and PNN on both analytic solutions, scored by MSE at ``t_end``."""
    g = BurgersGrid(cfg.N, cfg.nu, cfg.boundary)
    x = g.x_nodes
    t0 = time.perf_counter()
    m = build_map(burgers_semidiscrete(g), BuildConfig(1, cfg.pnn_dt, cfg.substeps))
    build_time = time.perf_counter() - t0
    fdm_steps = int(round(cfg.t_end / cfg.fdm_dt))
    pnn_steps = int(round(cfg.t_end / cfg.pnn_dt))
    rows = []
    for name, sol in (("u1", burgers_analytic_u1), ("u2", burgers_analytic_u2)):
        u0 = sol(0.0, x, cfg.nu)
        exact = sol(cfg.t_end, x, cfg.nu)
        bv = None
        if cfg.boundary == "dirichlet":
            def bv(t, sol=sol):
                return float(sol(t, x[0], cfg.nu)), float(sol(t, x[-1], cfg.nu))

        u_f = burgers_fdm(u0, cfg.nu, g.dx, cfg.fdm_dt, fdm_steps, bv)
        rows.append(bench(
            lambda: burgers_fdm(u0, cfg.nu, g.dx, cfg.fdm_dt, fdm_steps, bv),
            cfg.repeats, f"fdm {name}", fdm_steps, mse(u_f, exact), {"dt": cfg.fdm_dt},
        ))
        u_p = burgers_propagate(m, g, u0, pnn_steps, bv)
        rows.append(bench(
            lambda: burgers_propagate(m, g, u0, pnn_steps, bv),
            cfg.repeats, f"pnn {name}", pnn_steps, mse(u_p, exact), {"dt": cfg.pnn_dt},
        ))
    info = {"map_build_time": build_time, "map_nnz": m.nnz(), "N": cfg.N, "nu": cfg.nu, "boundary": cfg.boundary}
    return rows, info


@dataclass(frozen=True)
class DeflectorConfig:
    R: float = 10.0
    theta: float = np.pi / 4
    order: int = 3
    substeps: int = 100
    rk4_steps: int = 30
    samples: int = 100_000
    radius: float = 0.3
    seed: int = 0
    repeats: int = 3


def random_disc(count: int, radius: float, seed: int) -> np.ndarray:
    """``count`` points drawn uniformly from the disc of ``radius``."""
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.random(count))
    phi = 2 * np.pi * rng.random(count)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def deflector_benchmark(cfg: DeflectorConfig = DeflectorConfig()) -> tuple[list[BenchResult], dict]:
    """One map application against ``rk4_steps`` RK4 steps on a batch."""
    sys = deflector(DeflectorParams(cfg.R, cfg.theta))
    t0 = time.perf_counter()
    m = build_map(sys, BuildConfig(cfg.order, cfg.theta, cfg.substeps))
    build_time = time.perf_counter() - t0
    X = random_disc(cfg.samples, cfg.radius, cfg.seed)
    ref = rk4_fixed(sys, X, cfg.theta, cfg.rk4_steps).final
    err = float(np.max(np.abs(m(X) - ref)))
    rows = [
        bench(lambda: m(X), cfg.repeats, "map", 1, err, {"samples": cfg.samples}),
        bench(lambda: rk4_fixed(sys, X, cfg.theta, cfg.rk4_steps), cfg.repeats, "rk4", cfg.rk4_steps, 0.0,
              {"samples": cfg.samples}),
    ]
    info = {"map_build_time": build_time, "speedup": rows[1].elapsed / rows[0].elapsed}
    return rows, info


@dataclass(frozen=True)
class RPConfig:
    R0s: tuple[float, ...] = (0.85e-3, 1e-3, 1.15e-3)
    order: int = 7
    largest: float = 1e-4
    smallest: float = 1e-19
    substeps: int = 100
    rtol: float = 1e-7
    estimator: str = "tail"
    warm_start: bool = True
    rk_rtol: float = 1e-9
    rk_atol: float = 1e-12
    collapse_fraction: float = 0.01
    t_end: float = 1e-3
    repeats: int = 3


def rp_benchmark(cfg: RPConfig = RPConfig(), family=None) -> tuple[list[BenchResult], dict]:
    """Adaptive map family against Dormand-Prince up to the collapse radius.

    The family depends only on the liquid, not on ``R0``, so one family
    serves every initial radius.  The error is the largest relative
    deviation in ``R`` from the reference, sampled at the map's time points.
    """
    sys = rayleigh_plesset(RayleighPlessetParams())
    build_time = 0.0
    if family is None:
        t0 = time.perf_counter()
        family = build_map_family(sys, cfg.order, decade_spans(cfg.largest, cfg.smallest), cfg.substeps)
        build_time = time.perf_counter() - t0
    rows = []
    per_r0 = []
    for R0 in cfg.R0s:
        x0 = RayleighPlessetParams(R0=R0).initial_state
        r_stop = cfg.collapse_fraction * R0
        stop = StopBelow(0, r_stop)

        def run_map():
            return adaptive_propagate(family, x0, cfg.t_end, cfg.rtol, stop=stop,
                                      estimator=cfg.estimator, warm_start=cfg.warm_start)

        def run_rk(t_eval=None):
            return rk45_adaptive(sys, x0, cfg.t_end, cfg.rk_rtol, cfg.rk_atol,
                                 stop=lambda y: y[0] - r_stop, t_eval=t_eval)

        traj = run_map()
        keep = traj.states[:, 0] > r_stop
        ref = run_rk(traj.times[keep])
        n = len(ref.times)
        rel = np.abs(traj.states[:n, 0] - ref.states[:, 0]) / np.abs(ref.states[:, 0])
        err = float(np.max(rel))
        t_map = bench(run_map, cfg.repeats, f"map R0={R0!r}", len(traj) - 1, err, {"rtol": cfg.rtol})
        t_rk = bench(run_rk, cfg.repeats, f"rk45 R0={R0!r}", max(1, run_rk().metadata["n_steps"]), 0.0,
                     {"rtol": cfg.rk_rtol})
        rows += [t_map, t_rk]
        per_r0.append({
            "R0": R0, "max_rel_err": err, "compared_points": n,
            "map_time": t_map.elapsed, "rk45_time": t_rk.elapsed,
            "ratio": t_rk.elapsed / t_map.elapsed, "t_collapse_map": float(traj.times[-1]),
        })
    info = {"family_build_time": build_time, "spans": family.spans, "runs": per_r0}
    return rows, info


def vdp_dataset(x0=(-2.0, 4.0), dt: float = 0.01, t_end: float = 7.0) -> DataSet:
    """Van der Pol trajectory pairs from fixed-step RK4."""
    steps = int(round(t_end / dt))
    states = rk4_fixed(van_der_pol(), np.asarray(x0, dtype=float), steps * dt, steps).states
    return DataSet.from_trajectory(states, dt)
