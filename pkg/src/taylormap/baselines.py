"""Reference solvers, analytic solutions, error metrics and timing.

Everything a Taylor map is benchmarked against lives here: fixed-step RK4,
an adaptive Dormand-Prince 5(4) integrator, the explicit upwind scheme for
Burgers' equation and its two analytic solutions.
"""

from __future__ import annotations

import statistics
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import NumericalError
from .odemodel import PolynomialODE
from .pnn import Trajectory

__all__ = [
    "BenchResult",
    "rk4_fixed",
    "rk45_adaptive",
    "burgers_fdm",
    "burgers_analytic_u1",
    "burgers_analytic_u2",
    "mse",
    "mean_rel_err",
    "bench",
]


def rk4_fixed(sys: PolynomialODE | Callable, x0, t_span: float, steps: int) -> Trajectory:
    """Classical RK4 with ``steps`` equal steps.

    ``x0`` may be a batch ``(B, n)``; the trajectory then holds the batch
    at every time.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    f = sys
    x = np.asarray(x0, dtype=float)
    h = t_span / steps
    states = [x]
    for i in range(1, steps + 1):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"RK4 produced a non-finite state at step {i}")
        states.append(x)
    times = np.linspace(0.0, t_span, steps + 1) if t_span > 0 else np.arange(steps + 1.0)
    return Trajectory(times, np.array(states))


# Dormand-Prince 5(4) tableau with its order-4 continuous extension.
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

MIN_STEP = 1e-22


def _dense(y, h, K, theta):
    return y + h * (K.T @ (_P @ (theta ** np.arange(1, 5))))


def _initial_step(f, y, fy, rtol, atol):
    """Starting step from the size of the first two derivatives."""
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((fy / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = f(y + h0 * fy)
    d2 = np.sqrt(np.mean(((f1 - fy) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def rk45_adaptive(
    sys: PolynomialODE | Callable,
    x0,
    t_span: float,
    rtol: float = 1e-6,
    atol: float = 1e-12,
    stop: Callable[[np.ndarray], float] | None = None,
    t_eval=None,
    h0: float | None = None,
) -> Trajectory:
    """Dormand-Prince 5(4) with PI step-size control.

    ``stop(x)`` is an event function; integration ends where it first
    changes sign from positive to non-positive (located on the dense
    output).  With ``t_eval`` the returned trajectory is sampled at those
    times (those before the stop); otherwise it holds every accepted step.
    """
    f = sys
    y = np.asarray(x0, dtype=float)
    t = 0.0
    if t_span <= 0:
        return Trajectory([0.0], [y], {"n_steps": 0, "n_rejected": 0, "t_stop": 0.0})
    t_eval = None if t_eval is None else np.asarray(t_eval, dtype=float)
    out_t, out_y = [], []
    if t_eval is None:
        out_t.append(0.0)
        out_y.append(y)
    else:
        out_t.extend(t_eval[t_eval == 0.0])
        out_y.extend([y] * len(out_t))
    next_eval = len(out_t)

    fy = f(y)
    if h0 is None:
        h0 = _initial_step(f, y, fy, rtol, atol)
    h = min(h0, t_span)
    err_prev = 1e-4
    beta = 0.04
    alpha = 0.2 - 0.75 * beta
    n_steps = n_rej = 0
    g_prev = stop(y) if stop else None
    t_stop = t_span
    K = np.empty((7, y.size))
    done = False
    while not done:
        h = min(h, t_span - t)
        K[0] = fy
        for s in range(1, 7):
            K[s] = f(y + h * (np.asarray(_A[s]) @ K[:s]))
        y_new = y + h * (_B5[:6] @ K[:6])
        K[6] = f(y_new)
        err_vec = h * (_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not np.isfinite(err) or err > 1.0:
            h *= max(0.2, 0.9 * err**-alpha) if np.isfinite(err) else 0.2
            n_rej += 1
            if h < MIN_STEP:
                raise NumericalError(f"rk45 step size underflow ({h:.3e}) at t={t!r}")
            continue
        n_steps += 1
        t_new = t + h
        theta_stop = None
        if stop is not None:
            g_new = stop(y_new)
            if g_prev > 0 and g_new <= 0:
                Kc = K.copy()
                theta_stop = brentq(lambda th: stop(_dense(y, h, Kc, th)), 0.0, 1.0, xtol=1e-14)
                t_stop = t + theta_stop * h
            g_prev = g_new
        if t_eval is not None:
            limit = t_stop if theta_stop is not None else t_new
            while next_eval < len(t_eval) and t_eval[next_eval] <= limit:
                th = (t_eval[next_eval] - t) / h
                out_t.append(t_eval[next_eval])
                out_y.append(_dense(y, h, K, th))
                next_eval += 1
        if theta_stop is not None:
            if t_eval is None:
                out_t.append(t_stop)
                out_y.append(_dense(y, h, K, theta_stop))
            done = True
            break
        y, fy, t = y_new, K[6].copy(), t_new
        if t_eval is None:
            out_t.append(t)
            out_y.append(y)
        if t >= t_span:
            done = True
        fac = 0.9 * err ** -alpha * err_prev**beta if err > 0 else 10.0
        h *= min(10.0, max(0.2, fac))
        err_prev = max(err, 1e-4)
    meta = {"n_steps": n_steps, "n_rejected": n_rej, "t_stop": t_stop if stop else t}
    return Trajectory(np.array(out_t), np.array(out_y).reshape(len(out_t), -1), meta)


def burgers_fdm(
    u0,
    nu: float,
    dx: float,
    dt: float,
    steps: int,
    boundary_values: Callable[[float], tuple[float, float]] | None = None,
) -> np.ndarray:
    """Explicit Euler / first-order upwind / centred diffusion scheme.

    ``u[i] -= dt*u[i]*(u[i]-u[i-1])/dx - nu*dt*(u[i+1]-2u[i]+u[i-1])/dx**2``
    with periodic indexing, or with the end values replaced by
    ``boundary_values(t)`` after every step.
    """
    u = np.array(u0, dtype=float)
    if dt > dx**2 / (2 * nu):
        warnings.warn(f"dt={dt:g} exceeds the diffusive stability limit {dx**2 / (2 * nu):g}")
    c_adv = dt / dx
    c_diff = nu * dt / dx**2
    back = np.empty_like(u)
    lap = np.empty_like(u)
    for n in range(1, steps + 1):
        back[1:] = u[1:] - u[:-1]
        back[0] = u[0] - u[-1]
        lap[1:-1] = u[2:] - 2 * u[1:-1] + u[:-2]
        lap[0] = u[1] - 2 * u[0] + u[-1]
        lap[-1] = u[0] - 2 * u[-1] + u[-2]
        u = u - c_adv * u * back + c_diff * lap
        if boundary_values is not None:
            u[0], u[-1] = boundary_values(n * dt)
        if not np.isfinite(u[0]) or not np.isfinite(u[-1]):
            raise NumericalError(f"FDM produced a non-finite field at step {n}")
    if not np.all(np.isfinite(u)):
        raise NumericalError(f"FDM produced a non-finite field by step {steps}")
    return u


def burgers_analytic_u1(t, x, nu: float):
    """Sawtooth solution built from two Gaussian images, ``-2 nu phi_x/phi + 4``.

    Evaluated as a softmax over the two exponents so it stays finite for
    small ``nu``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    a = x - 4 * t
    b = a - 2 * np.pi
    s = 4 * nu * (t + 1)
    ea, eb = -(a**2) / s, -(b**2) / s
    m = np.maximum(ea, eb)
    wa, wb = np.exp(ea - m), np.exp(eb - m)
    return (wa * a + wb * b) / ((t + 1) * (wa + wb)) + 4


def burgers_analytic_u2(t, x, nu: float):
    """Travelling front ``1 / (1 + exp((x - t/2) / (2 nu)))``."""
    z = 0.5 * (np.asarray(x, dtype=float) - 0.5 * np.asarray(t, dtype=float)) / nu
    # 1/(1+e^z) written to avoid overflow for large |z|
    return np.where(z > 0, np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))), 1 / (1 + np.exp(-np.abs(z))))


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.mean((a - b) ** 2))


def mean_rel_err(a, b, eps: float = 1e-12) -> float:
    """Mean of ``|a - b| / max(|b|, eps)``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.mean(np.abs(a - b) / np.maximum(np.abs(b), eps)))


@dataclass
class BenchResult:
    label: str
    elapsed: float
    steps: int = 1
    error: float | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.elapsed < 0:
            raise ValueError("elapsed time cannot be negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "elapsed": self.elapsed,
            "steps": self.steps,
            "error": self.error,
            "config": self.config,
        }


def bench(
    runner: Callable[[], object],
    repeats: int = 5,
    label: str = "",
    steps: int = 1,
    error: float | None = None,
    config: dict | None = None,
) -> BenchResult:
    """Median wall time of ``repeats`` calls after one warm-up call."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    runner()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        runner()
        times.append(time.perf_counter() - t0)
    return BenchResult(label, statistics.median(times), steps, error, dict(config or {}))
