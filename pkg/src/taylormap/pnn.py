"""Polynomial neural networks: chains of Taylor-map layers.

A layer is any polynomial map; a :class:`~taylormap.mapbuilder.TaylorMap`
also carries the time span it covers so trajectories are stamped with
simulated time.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .errors import CrossingError, ToleranceError
from .mapbuilder import AdaptiveMapFamily, BuildConfig, TaylorMap, build_map
from .odemodel import BurgersGrid
from .polyalg import compose_truncate

__all__ = [
    "PNN",
    "Trajectory",
    "StopBelow",
    "apply",
    "compose",
    "propagate",
    "adaptive_propagate",
    "burgers_propagate",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PNN:
    """Ordered layers; ``shared`` marks a chain that repeats one map."""

    layers: tuple
    shared: bool = False

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a PNN needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if _n_out(a) != _n_in(b):
                raise ValueError(
                    f"layer {i} yields {_n_out(a)} values but layer {i + 1} expects {_n_in(b)}"
                )
        object.__setattr__(self, "layers", layers)

    @classmethod
    def repeated(cls, layer: TaylorMap, count: int) -> "PNN":
        if count < 1:
            raise ValueError("count must be >= 1")
        return cls((layer,) * count, shared=True)

    def __len__(self) -> int:
        return len(self.layers)

    def __call__(self, x) -> np.ndarray:
        for layer in self.layers:
            x = layer(x)
        return x


def _n_in(layer) -> int:
    return layer.n if isinstance(layer, TaylorMap) else layer.n_in


def _n_out(layer) -> int:
    return layer.n if isinstance(layer, TaylorMap) else layer.n_out


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i + 1}" for i in range(self.states.shape[1])])
            for t, row in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class StopBelow:
    """Stop condition ``x[index] <= value``, e.g. a collapse radius."""

    index: int
    value: float

    def __call__(self, t: float, x: np.ndarray) -> bool:
        return bool(x[self.index] <= self.value)


def apply(map: TaylorMap, x0) -> np.ndarray:
    return map(x0)


def compose(a: TaylorMap, b: TaylorMap, order: int | None = None) -> TaylorMap:
    """The map "``a`` then ``b``", truncated at ``order``."""
    if a.n != b.n:
        raise ValueError(f"cannot compose maps of dimension {a.n} and {b.n}")
    span = a.t_span + b.t_span
    label = f"({b.source_label}) o ({a.source_label})"
    if a.is_sparse and b.is_sparse:
        return TaylorMap(None, span, label, sparse_linear=(b.sparse_linear @ a.sparse_linear).tocsr())
    if order is None:
        order = max(a.order, b.order)
    weights = compose_truncate(b.dense_weights, a.dense_weights, order)
    return TaylorMap(weights, span, label)


def propagate(net: PNN, x0) -> Trajectory:
    """Apply the layers in turn, recording every intermediate state."""
    x = np.asarray(x0, dtype=float)
    times = [0.0]
    states = [x]
    t = 0.0
    for i, layer in enumerate(net.layers):
        x = layer(x)
        if not np.all(np.isfinite(x)):
            log.warning("non-finite state after layer %d", i)
        t += getattr(layer, "t_span", 1.0)
        times.append(t)
        states.append(x)
    return Trajectory(np.array(times), np.array(states))


def _discrepancy(coarse: np.ndarray, fine: np.ndarray, start: np.ndarray) -> float:
    """Largest componentwise error of ``coarse`` relative to ``fine``.

    Each component is scaled by the larger of its start and end magnitude.
    """
    if not (np.all(np.isfinite(coarse)) and np.all(np.isfinite(fine))):
        return math.inf
    scale = np.maximum(np.abs(start), np.abs(fine))
    diff = np.abs(coarse - fine)
    nz = scale > 0
    if np.any(diff[~nz] > 0):
        return math.inf
    return float(np.max(diff[nz] / scale[nz], initial=0.0))


def adaptive_propagate(
    family: AdaptiveMapFamily,
    x0,
    t_end: float,
    rtol: float,
    stop: Callable[[float, np.ndarray], bool] | None = None,
    max_steps: int = 1_000_000,
    estimator: str = "family",
    warm_start: bool = False,
) -> Trajectory:
    """Propagate with the largest family member that passes an error check.

    At each step the members are tried from the largest span that fits in
    the remaining time downwards (or, with ``warm_start``, from one member
    above the span accepted last).  Two error checks are available:

    ``estimator="family"``
        One application of the member of span ``tau`` is compared with the
        next smaller member applied ``round(tau / tau_next)`` times.  The
        smallest member has no finer reference; it is accepted when the
        rejected discrepancy of the member above, scaled linearly by the
        span ratio, is within ``rtol``.
    ``estimator="tail"``
        The contribution of the highest-degree block alone, relative to the
        state, stands in for the truncated remainder.  It costs a single
        application per trial.

    Propagation ends at ``t_end`` or when ``stop(t, x)`` is true.  A
    remainder shorter than the smallest span is covered by a map built on
    the fly when the family carries its system, otherwise by one extra
    smallest step and linear interpolation back to ``t_end``.

    The tail estimator on a single state runs in a compiled loop when numba
    is available and ``stop`` is ``None`` or a :class:`StopBelow`.
    """
    if not rtol > 0:
        raise ValueError("rtol must be positive")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if estimator not in ("family", "tail"):
        raise ValueError(f"unknown estimator {estimator!r}")
    maps = family.maps
    spans = np.array(family.spans)
    last = len(maps) - 1
    reps = [max(1, round(spans[i] / spans[i + 1])) for i in range(last)]

    x = np.asarray(x0, dtype=float)
    t = 0.0
    times, states, used = [0.0], [x], []
    meta: dict = {"rtol": rtol, "estimator": estimator, "stopped": False, "final_step": None}
    prev = 0

    if (
        estimator == "tail"
        and _kernels.HAVE_NUMBA
        and x.ndim == 1
        and not any(m.is_sparse for m in maps)
        and (stop is None or isinstance(stop, StopBelow))
    ):
        return _tail_compiled(family, x, t_end, rtol, stop, max_steps, warm_start, meta)

    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_steps):
            remaining = t_end - t
            if remaining <= _roundoff(len(times), t_end):
                break
            if stop is not None and stop(t, x):
                meta["stopped"] = True
                break
            first = int(np.searchsorted(-spans, -remaining * (1 + 1e-12)))
            if first > last:
                used.append(remaining)
                x, t = _final_partial(family, x, t, t_end, meta, times, states)
                break
            if warm_start:
                first = max(first, prev - 1)
            if estimator == "tail":
                accepted, last_err = _select_tail(maps, x, first, rtol)
            else:
                accepted, last_err = _select_family(maps, reps, x, first, rtol)
            if accepted is None:
                raise ToleranceError(
                    f"tolerance {rtol:g} unattainable at t={t!r}: smallest span "
                    f"{spans[-1]:g} still fails (last error estimate {last_err:.3e})"
                )
            prev, x = accepted
            t = t + spans[prev]
            times.append(t)
            states.append(x)
            used.append(spans[prev])
        else:
            raise ToleranceError(f"max_steps={max_steps} reached at t={t!r}")

    meta["spans_used"] = used
    return Trajectory(np.array(times), np.array(states), meta)


def _tail_compiled(family, x, t_end, rtol, stop, max_steps, warm_start, meta):
    maps = family.maps
    spans = np.array(family.spans)
    n, order = family.n, family.order
    S = np.ascontiguousarray(np.stack([m._stacked for m in maps]))
    first, parent = _kernels.stacked_recursion(n, order)
    top = S.shape[2] - maps[0].weights.coeffs[-1].shape[1]
    stop_index, stop_value = (-1, 0.0) if stop is None else (int(stop.index), float(stop.value))
    x = np.array(x, dtype=float)
    t, prev = 0.0, 0
    times, states, used = [np.zeros(1)], [x[None].copy()], []
    total = 0
    chunk = 4096
    while True:
        tb = np.empty(min(chunk, max_steps - total))
        sb = np.empty((tb.size, n))
        if tb.size == 0:
            raise ToleranceError(f"max_steps={max_steps} reached at t={t!r}")
        count, t, prev, status = _kernels.tail_steps(
            S, spans, first, parent, top, x, t, float(t_end), float(rtol),
            bool(warm_start), prev, stop_index, stop_value, tb, sb,
        )
        times.append(tb[:count])
        states.append(sb[:count])
        total += count
        if status == 0:
            continue
        if status == 3:
            raise ToleranceError(
                f"tolerance {rtol:g} unattainable at t={t!r}: smallest span "
                f"{spans[-1]:g} still fails"
            )
        break
    times = np.concatenate(times)
    states = np.concatenate(states)
    used = list(np.diff(times))
    if status == 2:
        meta["stopped"] = True
    elif t_end - t > _roundoff(len(times), t_end):
        tl, sl = list(times), list(states)
        used.append(t_end - t)
        _final_partial(family, states[-1], t, t_end, meta, tl, sl)
        times, states = np.array(tl), np.array(sl)
    meta["spans_used"] = used
    return Trajectory(times, states, meta)


def _roundoff(steps: int, t_end: float) -> float:
    """Rounding error of a sum of ``steps`` spans; smaller remainders are done."""
    return steps * np.finfo(float).eps * t_end


def _select_family(maps, reps, x, first, rtol):
    last = len(maps) - 1
    last_err = math.inf
    cached = None
    for i in range(first, last + 1):
        coarse = cached if cached is not None else maps[i](x)
        cached = None
        if i == last:
            # no finer member to compare with
            est = last_err * maps[i].t_span / maps[i - 1].t_span if i > first else 0.0
            if est <= rtol and np.all(np.isfinite(coarse)):
                return (i, coarse), est
            return None, last_err
        y = maps[i + 1](x)
        cached = y
        for _ in range(reps[i] - 1):
            y = maps[i + 1](y)
        last_err = _discrepancy(coarse, y, x)
        if last_err <= rtol:
            return (i, coarse), last_err
    return None, last_err


def _select_tail(maps, x, first, rtol):
    err = math.inf
    for i in range(first, len(maps)):
        y, tail = maps[i].apply_with_tail(x)
        err = _discrepancy(y - tail, y, x)
        if err <= rtol:
            return (i, y), err
    return None, err


def _final_partial(family, x, t, t_end, meta, times, states):
    remainder = t_end - t
    if family.system is not None:
        m = build_map(family.system, BuildConfig(family.order, remainder, family.substeps))
        x = m(x)
        meta["final_step"] = f"built map for remainder {remainder!r}"
    else:
        smallest = family.maps[-1]
        y = smallest(x)
        w = remainder / smallest.t_span
        x = (1 - w) * x + w * y
        meta["final_step"] = f"interpolated remainder {remainder!r}"
    times.append(t_end)
    states.append(x)
    return x, t_end


def burgers_propagate(
    map: TaylorMap,
    grid: BurgersGrid,
    u0,
    steps: int,
    boundary_values: Callable[[float], tuple[float, float]] | None = None,
    conserve: bool = True,
) -> np.ndarray:
    """Advance a Burgers field with the characteristics-form map.

    Every step starts from nodes on the uniform grid, moves them with the
    map and interpolates the field back onto the grid (periodically, or
    between the Dirichlet values ``boundary_values(t)`` at the two ends).
    Raises :class:`CrossingError` if moved nodes lose their order.

    The map conserves ``sum(U)`` but linear resampling does not.  With
    ``conserve`` (periodic grids only) the resampled field is shifted by a
    constant after every step to restore the initial sum.
    """
    N = grid.N
    if map.n != 2 * N:
        raise ValueError(f"map has dimension {map.n}, grid needs {2 * N}")
    dirichlet = grid.boundary == "dirichlet"
    if dirichlet and boundary_values is None:
        raise ValueError("Dirichlet grids need boundary_values")
    x = grid.x_nodes
    L = grid.length
    u = np.array(u0, dtype=float)
    if u.shape != (N,):
        raise ValueError(f"u0 must have length {N}")
    total = u.sum()
    W = map.sparse_linear if map.is_sparse else None
    z = np.empty(2 * N)
    xp = np.empty(N)
    up = np.empty(N)
    xp[0], xp[-1] = x[0], x[-1]
    for step in range(1, steps + 1):
        z[:N] = x
        z[N:] = u
        z = W @ z if W is not None else map(z)
        X, U = z[:N], z[N:]
        if dirichlet:
            inner_X, inner_U = X[1:-1], U[1:-1]
            if np.any(inner_X[1:] <= inner_X[:-1]):
                raise CrossingError(f"characteristics crossed at step {step}")
            uL, uR = boundary_values(step * map.t_span)
            if inner_X[0] > x[0] and inner_X[-1] < x[-1]:
                xp[1:-1] = inner_X
                up[1:-1] = inner_U
                up[0], up[-1] = uL, uR
                u = np.interp(x, xp, up)
            else:
                keep = (inner_X > x[0]) & (inner_X < x[-1])
                u = np.interp(x, np.r_[x[0], inner_X[keep], x[-1]], np.r_[uL, inner_U[keep], uR])
        else:
            if np.any(X[1:] <= X[:-1]) or X[-1] - X[0] >= L:
                raise CrossingError(f"characteristics crossed at step {step}")
            u = np.interp(x, X, U, period=L)
            if conserve:
                u += (total - u.sum()) / N
        if not (np.isfinite(u[0]) and np.isfinite(u[-1])):
            raise CrossingError(f"non-finite field at step {step}")
    if not np.all(np.isfinite(u)):
        raise CrossingError(f"non-finite field by step {steps}")
    return u
