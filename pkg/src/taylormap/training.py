"""Fitting Taylor-map weights to data.

A map is linear in its weights, so fitting it to pairs ``(x_in, x_out)``
is linear least squares over the monomials of ``x_in``.  Gradient fitting
with an Adamax update is provided as well, optionally with a binary mask
on the weight entries chosen after each epoch by solving a QUBO: with the
weights frozen the loss is quadratic in the 0/1 mask bits.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from . import _kernels
from .errors import RankDeficientError, TrainingError
from .mapbuilder import TaylorMap
from .odemodel import PolynomialODE, eval_rhs
from .pnn import PNN
from .polyalg import PolyMap, _offsets, _split, basis_size, monomial_basis, reduced_powers

__all__ = [
    "DataSet",
    "BinaryMask",
    "FitReport",
    "QuboProblem",
    "QuboSolution",
    "design_matrix",
    "monomial_names",
    "default_lambda",
    "fit_least_squares",
    "fit_gradient",
    "mask_qubo",
    "solve_qubo",
    "qubo_mask_step",
    "residual_loss",
    "fine_tune_residual",
    "stack_architecture",
    "fit_stack",
]

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 20


@dataclass(frozen=True, eq=False)
class DataSet:
    """Pairs of states ``dt`` apart, stored row-wise."""

    x_in: np.ndarray
    x_out: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        x_in = np.atleast_2d(np.asarray(self.x_in, dtype=float))
        x_out = np.atleast_2d(np.asarray(self.x_out, dtype=float))
        if x_in.shape[0] == 0:
            raise ValueError("a data set needs at least one pair")
        if x_in.shape[0] != x_out.shape[0]:
            raise ValueError(f"{x_in.shape[0]} inputs but {x_out.shape[0]} outputs")
        if not (np.all(np.isfinite(x_in)) and np.all(np.isfinite(x_out))):
            raise ValueError("data contain non-finite values")
        object.__setattr__(self, "x_in", x_in)
        object.__setattr__(self, "x_out", x_out)

    @classmethod
    def from_trajectory(cls, states, dt: float = 1.0) -> "DataSet":
        """Consecutive states of one trajectory as pairs."""
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or len(states) < 2:
            raise ValueError("need a (steps, n) array with at least two states")
        return cls(states[:-1], states[1:], dt)

    @classmethod
    def from_pairs(cls, pairs: Sequence, dt: float = 1.0) -> "DataSet":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("a data set needs at least one pair")
        return cls(np.array([a for a, _ in pairs]), np.array([b for _, b in pairs]), dt)

    def __len__(self) -> int:
        return self.x_in.shape[0]

    @property
    def n_in(self) -> int:
        return self.x_in.shape[1]

    @property
    def n_out(self) -> int:
        return self.x_out.shape[1]

    @property
    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.x_in, self.x_out))

    def scaled(self, c: float) -> "DataSet":
        return DataSet(c * self.x_in, c * self.x_out, self.dt)

    def to_csv(self, path) -> None:
        header = [f"x_in_{i + 1}" for i in range(self.n_in)] + [f"x_out_{i + 1}" for i in range(self.n_out)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for a, b in zip(self.x_in, self.x_out):
                w.writerow([repr(float(v)) for v in np.r_[a, b]])

    @classmethod
    def from_csv(cls, path, dt: float = 1.0) -> "DataSet":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: no data rows")
        header = rows[0]
        n_in = sum(h.startswith("x_in_") for h in header)
        n_out = sum(h.startswith("x_out_") for h in header)
        if n_in == 0 or n_out == 0 or n_in + n_out != len(header):
            raise ValueError(f"{path}: header must be x_in_1..x_in_n, x_out_1..x_out_m")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        return cls(data[:, :n_in], data[:, n_in:], dt)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """One 0/1 matrix per weight block, multiplied entry-wise with the weights."""

    blocks: tuple[np.ndarray, ...]
    n_in: int

    def __post_init__(self):
        blocks = tuple(np.array(b, dtype=np.int8) for b in self.blocks)
        if not blocks:
            raise ValueError("a mask needs at least one block")
        n_out = blocks[0].shape[0]
        for k, b in enumerate(blocks):
            if b.shape != (n_out, basis_size(self.n_in, k)):
                raise ValueError(f"mask block {k} has shape {b.shape}")
            if np.any((b != 0) & (b != 1)):
                raise ValueError("mask entries must be 0 or 1")
            b.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def ones(cls, n_in: int, n_out: int, order: int) -> "BinaryMask":
        return cls(tuple(np.ones((n_out, basis_size(n_in, k))) for k in range(order + 1)), n_in)

    @classmethod
    def support(cls, p: PolyMap) -> "BinaryMask":
        """Ones exactly where ``p`` has nonzero weights."""
        return cls(tuple((c != 0).astype(np.int8) for c in p.coeffs), p.n_in)

    @classmethod
    def from_stacked(cls, bits: np.ndarray, n_in: int, order: int) -> "BinaryMask":
        return cls(_split(np.asarray(bits), n_in, order), n_in)

    @property
    def order(self) -> int:
        return len(self.blocks) - 1

    @property
    def n_out(self) -> int:
        return self.blocks[0].shape[0]

    def stacked(self) -> np.ndarray:
        return np.hstack(self.blocks)

    def popcount(self) -> int:
        return int(sum(int(b.sum()) for b in self.blocks))

    def apply(self, p: PolyMap) -> PolyMap:
        if p.order != self.order or p.n_in != self.n_in or p.n_out != self.n_out:
            raise ValueError("mask and weights differ in shape")
        return PolyMap(tuple(c * b for c, b in zip(p.coeffs, self.blocks)), p.n_in)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.n_in == other.n_in and np.array_equal(self.stacked(), other.stacked())

    __hash__ = None

    def to_dict(self) -> dict:
        return {"n_in": self.n_in, "blocks": [b.tolist() for b in self.blocks]}

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryMask":
        n_in = int(d["n_in"])
        blocks = [np.asarray(b, dtype=np.int8).reshape(-1, basis_size(n_in, k)) for k, b in enumerate(d["blocks"])]
        return cls(tuple(blocks), n_in)


@dataclass(eq=False)
class FitReport:
    """Outcome of a fit.

    ``map`` is a :class:`TaylorMap` of span ``dt`` when input and output
    dimensions agree, otherwise the bare :class:`PolyMap`.
    """

    map: TaylorMap | PolyMap
    mask: BinaryMask
    loss_history: list[float]
    epochs: int
    nnz: int
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.loss_history:
            raise ValueError("loss_history must not be empty")
        if self.nnz != self.mask.popcount():
            raise ValueError("nnz must equal the mask popcount")

    @property
    def weights(self) -> PolyMap:
        return self.map.dense_weights if isinstance(self.map, TaylorMap) else self.map

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]

    def epochs_to(self, level: float) -> int | None:
        """First epoch (1-based) whose loss is at or below ``level``."""
        for i, v in enumerate(self.loss_history):
            if v <= level:
                return i + 1
        return None

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.to_dict(),
            "t_span": self.map.t_span if isinstance(self.map, TaylorMap) else None,
            "mask": self.mask.to_dict(),
            "loss_history": [float(v) for v in self.loss_history],
            "epochs": self.epochs,
            "nnz": self.nnz,
            **{k: v for k, v in self.extra.items()},
        }


@dataclass(frozen=True, eq=False)
class QuboProblem:
    """``E(b) = offset + linear . b + b^T quadratic b`` over ``b`` in {0,1}^n.

    ``quadratic`` is symmetric with a zero diagonal; diagonal terms belong
    in ``linear`` since ``b_i**2 == b_i``.
    """

    linear: np.ndarray
    quadratic: np.ndarray
    var_names: tuple[str, ...] = ()
    offset: float = 0.0

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).ravel()
        Q = np.asarray(self.quadratic, dtype=float)
        n = lin.size
        if Q.shape != (n, n):
            raise ValueError(f"quadratic must be {n}x{n}, got {Q.shape}")
        if not np.allclose(Q, Q.T, rtol=1e-12, atol=0.0):
            raise ValueError("quadratic must be symmetric")
        if np.any(np.diag(Q) != 0):
            lin = lin + np.diag(Q)
            Q = Q - np.diag(np.diag(Q))
        names = tuple(self.var_names) or tuple(f"b{i}" for i in range(n))
        if len(names) != n:
            raise ValueError("one name per variable")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "quadratic", Q)
        object.__setattr__(self, "var_names", names)

    @property
    def size(self) -> int:
        return self.linear.size

    def energy(self, bits) -> np.ndarray | float:
        b = np.asarray(bits, dtype=float)
        e = self.offset + b @ self.linear + np.einsum("...i,ij,...j->...", b, self.quadratic, b)
        return float(e) if b.ndim == 1 else e


@dataclass(frozen=True)
class QuboSolution:
    bits: np.ndarray
    energy: float
    method: str


def _exhaustive(q: QuboProblem, chunk: int = 1 << 14) -> QuboSolution:
    n = q.size
    if n == 0:
        return QuboSolution(np.zeros(0, dtype=np.int8), q.offset, "exhaustive")
    shifts = np.arange(n)
    best_e, best_i = math.inf, 0
    for start in range(0, 1 << n, chunk):
        idx = np.arange(start, min(start + chunk, 1 << n))
        bits = ((idx[:, None] >> shifts) & 1).astype(float)
        e = q.energy(bits)
        j = int(np.argmin(e))
        if e[j] < best_e:
            best_e, best_i = float(e[j]), int(idx[j])
    bits = ((best_i >> shifts) & 1).astype(np.int8)
    return QuboSolution(bits, best_e, "exhaustive")


def _anneal(
    q: QuboProblem, seed: int, restarts: int = 4, proposals_per_var: int = 10_000, t_ratio: float = 1e-6
) -> QuboSolution:
    """Best of ``restarts`` annealing runs, the first started from all ones.

    Each run flips single bits with Metropolis acceptance while the
    temperature falls geometrically from the largest single-flip energy
    change to ``t_ratio`` times that over ``proposals_per_var * n``
    proposals, then descends greedily to a single-flip local minimum.
    """
    rng = np.random.default_rng(seed)
    n = q.size
    lin, Q = q.linear, np.ascontiguousarray(q.quadratic)
    T0 = float(np.max(np.abs(lin) + 2 * np.abs(Q).sum(axis=1), initial=0.0)) or 1.0
    total = proposals_per_var * n
    cooling = t_ratio ** (1.0 / max(total, 1))
    best = None
    for k in range(restarts):
        b0 = np.ones(n) if k == 0 else rng.integers(0, 2, n).astype(float)
        idx = rng.integers(n, size=total)
        u = rng.random(total)
        b = _polish(q, _kernels.anneal_run(lin, Q, b0, idx, u, T0, cooling))
        e = float(q.energy(b))
        if best is None or e < best[1]:
            best = (b, e)
    return QuboSolution(best[0].astype(np.int8), best[1], "anneal")


def _polish(q: QuboProblem, b: np.ndarray) -> np.ndarray:
    """Flip the most improving bit until no single flip improves."""
    lin, Q = q.linear, q.quadratic
    b = b.copy()
    field_ = Q @ b
    while True:
        delta = (1.0 - 2.0 * b) * (lin + 2.0 * field_)
        i = int(np.argmin(delta))
        if delta[i] >= 0:
            return b
        s = 1.0 - 2.0 * b[i]
        b[i] += s
        field_ += s * Q[:, i]


def solve_qubo(q: QuboProblem, seed: int = 0, method: str = "auto") -> QuboSolution:
    """Exhaustive search up to 20 variables, simulated annealing beyond."""
    if method == "auto":
        method = "exhaustive" if q.size <= EXHAUSTIVE_LIMIT else "anneal"
    if method == "exhaustive":
        if q.size > 30:
            raise ValueError(f"exhaustive search over {q.size} variables is not feasible")
        return _exhaustive(q)
    if method == "anneal":
        return _anneal(q, seed)
    raise ValueError(f"unknown QUBO method {method!r}")


def monomial_names(n: int, order: int) -> list[str]:
    names = []
    for k in range(order + 1):
        names.extend(str(m) if k else "1" for m in monomial_basis(n, k).indices)
    return names


def design_matrix(x: np.ndarray, order: int) -> np.ndarray:
    """Rows ``[x^[0], x^[1], ..., x^[order]]`` for each sample."""
    return np.concatenate(reduced_powers(np.atleast_2d(np.asarray(x, dtype=float)), order), axis=1)


def default_lambda(data: DataSet) -> float:
    """``1e-4`` times the mean squared norm of the input states."""
    with np.errstate(over="ignore"):
        return 1e-4 * float(np.mean(np.sum(data.x_in**2, axis=1)))


def _mse(Phi: np.ndarray, W: np.ndarray, Y: np.ndarray) -> float:
    return float(np.mean((Phi @ W.T - Y) ** 2))


def _as_map(W: np.ndarray, n_in: int, order: int, dt: float, label: str) -> TaylorMap | PolyMap:
    pm = PolyMap(_split(W, n_in, order), n_in)
    if pm.n_out == n_in:
        return TaylorMap(pm, dt, label)
    return pm


def _mask_bits(mask: BinaryMask | None, n_in: int, n_out: int, order: int) -> np.ndarray:
    if mask is None:
        return np.ones((n_out, _offsets(n_in, order)[-1]))
    if (mask.n_in, mask.n_out, mask.order) != (n_in, n_out, order):
        raise ValueError("mask shape does not match the data and order")
    return mask.stacked().astype(float)


def fit_least_squares(data: DataSet, order: int, mask: BinaryMask | None = None) -> FitReport:
    """Exact minimiser of the mean squared one-step error.

    Each output row is solved separately over its active monomials;
    masked entries come out exactly zero.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    Phi = design_matrix(data.x_in, order)
    B = _mask_bits(mask, data.n_in, data.n_out, order)
    names = monomial_names(data.n_in, order)
    W = np.zeros_like(B)
    for r in range(data.n_out):
        cols = np.nonzero(B[r])[0]
        if cols.size == 0:
            continue
        if len(data) < cols.size:
            raise RankDeficientError(
                f"output {r + 1}: {len(data)} pairs for {cols.size} unknowns"
            )
        A = Phi[:, cols]
        scale = np.linalg.norm(A, axis=0)
        if np.any(scale == 0):
            bad = [names[c] for c in cols[scale == 0]]
            raise RankDeficientError(f"output {r + 1}: monomials identically zero on the data: {bad}")
        A = A / scale
        _, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > d[0] * max(A.shape) * np.finfo(float).eps))
        if rank < cols.size:
            bad = [names[cols[p]] for p in piv[rank:]]
            raise RankDeficientError(
                f"output {r + 1}: design matrix has rank {rank} < {cols.size}; "
                f"dependent monomials: {bad}"
            )
        coef, *_ = np.linalg.lstsq(A, data.x_out[:, r], rcond=None)
        W[r, cols] = coef / scale
    final_mask = BinaryMask.from_stacked(B.astype(np.int8), data.n_in, order)
    fitted = _as_map(W, data.n_in, order, data.dt, f"least-squares order={order}")
    return FitReport(fitted, final_mask, [_mse(Phi, W, data.x_out)], 0, final_mask.popcount())


def mask_qubo(weights: PolyMap, data: DataSet, lam: float) -> list[QuboProblem]:
    """Mask-selection QUBO for frozen ``weights``, one problem per output row.

    The loss ``sum((x_out - (B*W) x_in^[.])**2) + lam * sum(B)``, summed
    over samples and components, does not couple different output rows, so each row is an independent problem
    over the bits of its nonzero weights.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    Phi = design_matrix(data.x_in, weights.order)
    W = weights.stacked()
    names = monomial_names(data.n_in, weights.order)
    G = Phi.T @ Phi
    H = Phi.T @ data.x_out
    problems = []
    for r in range(weights.n_out):
        idx = np.nonzero(W[r])[0]
        w = W[r, idx]
        g = G[np.ix_(idx, idx)]
        lin = w * w * np.diag(g) - 2.0 * w * H[idx, r] + lam
        Q = np.outer(w, w) * g
        np.fill_diagonal(Q, 0.0)
        Q = 0.5 * (Q + Q.T)
        offset = float(data.x_out[:, r] @ data.x_out[:, r])
        problems.append(QuboProblem(lin, Q, tuple(f"y{r + 1}:{names[i]}" for i in idx), offset))
    return problems


def qubo_mask_step(
    map: TaylorMap | PolyMap, data: DataSet, lam: float | None = None, seed: int = 0
) -> BinaryMask:
    """Best mask for the frozen weights of ``map``; zero weights get bit 0."""
    weights = map.dense_weights if isinstance(map, TaylorMap) else map
    if lam is None:
        lam = default_lambda(data)
    W = weights.stacked()
    bits = np.zeros(W.shape, dtype=np.int8)
    energy = 0.0
    for r, q in enumerate(mask_qubo(weights, data, lam)):
        sol = solve_qubo(q, seed=seed + r)
        bits[r, np.nonzero(W[r])[0]] = sol.bits
        energy += sol.energy
        if sol.method == "anneal":
            log.info("row %d: annealing finished at energy %.6e", r + 1, sol.energy)
    log.debug("mask energy %.6e", energy)
    return BinaryMask.from_stacked(bits, weights.n_in, weights.order)


def fit_gradient(
    data: DataSet,
    order: int,
    epochs: int,
    step: float,
    regularizer: str = "none",
    lam: float | None = None,
    *,
    mask: BinaryMask | None = None,
    init: PolyMap | None = None,
    batch_size: int = 32,
    seed: int = 0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    target_loss: float | None = None,
) -> FitReport:
    """Mini-batch Adamax on the mean squared one-step error.

    The model is ``B*W`` with ``B`` a 0/1 mask.  Gradients of masked
    entries are zero, so those entries stay exactly zero in the model.
    A fixed ``mask`` bounds ``B`` from above throughout.
    ``regularizer`` is ``"none"``, ``"l1"`` (adds ``lam * sum|W|`` to the
    summed squared error) or ``"qubo"`` (re-selects ``B`` from the raw weights with
    :func:`qubo_mask_step` after every epoch).  ``lam`` defaults to :func:`default_lambda`.

    Weights start from ``init`` if given, else from zero with an identity
    linear block when input and output dimensions agree.  Training stops
    early once the epoch loss reaches ``target_loss``.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not step > 0:
        raise ValueError("step must be positive")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if regularizer not in ("none", "l1", "qubo"):
        raise ValueError(f"unknown regularizer {regularizer!r}")
    if lam is None:
        lam = default_lambda(data)
    n_in, n_out = data.n_in, data.n_out
    with np.errstate(over="ignore", invalid="ignore"):
        Phi = design_matrix(data.x_in, order)
    Y = data.x_out
    fixed = _mask_bits(mask, n_in, n_out, order)
    B = fixed.copy()
    if init is not None:
        if (init.n_in, init.n_out) != (n_in, n_out):
            raise ValueError("init has the wrong dimensions")
        W = init.truncated(order).stacked().copy()
    else:
        W = np.zeros_like(B)
        if n_in == n_out:
            W[:, 1 : n_in + 1] = np.eye(n_in)
    rng = np.random.default_rng(seed)
    m1 = np.zeros_like(W)
    u = np.zeros_like(W)
    t = 0
    history: list[float] = []
    m = len(data)
    # overflowing weights surface as a non-finite loss below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, epochs + 1):
            for batch in np.array_split(rng.permutation(m), max(1, math.ceil(m / batch_size))):
                P, Yb = Phi[batch], Y[batch]
                Wm = B * W
                grad = (2.0 / (len(batch) * n_out)) * ((P @ Wm.T - Yb).T @ P)
                if regularizer == "l1":
                    grad = grad + (lam / (m * n_out)) * np.sign(W)
                grad *= B
                t += 1
                m1 = beta1 * m1 + (1 - beta1) * grad
                u = np.maximum(beta2 * u, np.abs(grad))
                W = W - (step / (1 - beta1**t)) * m1 / (u + 1e-12)
            if regularizer == "qubo":
                raw = PolyMap(_split(W, n_in, order), n_in)
                B = fixed * qubo_mask_step(raw, data, lam, seed=seed).stacked()
            loss = _mse(Phi, B * W, Y)
            if not math.isfinite(loss):
                raise TrainingError(f"loss became non-finite at epoch {epoch}")
            history.append(loss)
            if target_loss is not None and loss <= target_loss:
                break
    final = BinaryMask.from_stacked(B.astype(np.int8), n_in, order)
    fitted = _as_map(B * W, n_in, order, data.dt, f"adamax order={order} reg={regularizer}")
    return FitReport(fitted, final, history, len(history), final.popcount(), {"regularizer": regularizer, "lambda": lam})


def _chain(weights: PolyMap, x0: np.ndarray, layers: int) -> np.ndarray:
    z = [np.asarray(x0, dtype=float)]
    # line-search trials may diverge; the residual then reports inf
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(layers):
            z.append(weights(z[-1]))
    return np.array(z)


def residual_loss(map: TaylorMap, sys: PolynomialODE, x0, layers: int) -> float:
    """Midpoint residual of the chain ``z_{j+1} = map(z_j)``.

    ``sum_j ||(z_{j+1} - z_j)/dt - F((z_{j+1} + z_j)/2)||**2`` with
    ``dt = map.t_span``.
    """
    z = _chain(map.dense_weights, x0, layers)
    return _residual(z, sys, map.t_span)


def _residual(z: np.ndarray, sys: PolynomialODE, dt: float) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        r = (z[1:] - z[:-1]) / dt - eval_rhs(sys, 0.5 * (z[1:] + z[:-1]))
        val = float(np.sum(r * r))
    return val if math.isfinite(val) else math.inf


def fine_tune_residual(
    shared_map: TaylorMap,
    sys: PolynomialODE,
    x0,
    layers: int,
    sweeps: int,
    *,
    rel_bracket: float = 0.05,
    tol: float = 0.0,
) -> FitReport:
    """Coordinate descent on the midpoint residual of a shared-weight chain.

    Only entries that are nonzero in ``shared_map`` move.  Each sweep runs
    a golden-section line search per entry, started from the bracket
    ``w +- rel_bracket * max(|w|, 1e-3 * max|W|)``.  A sweep that raises the
    loss ends the run and the best weights so far are returned; so does a
    loss at or below ``tol``.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if sweeps < 0:
        raise ValueError("sweeps must be >= 0")
    weights = shared_map.dense_weights
    n, order, dt = weights.n_in, weights.order, shared_map.t_span
    W = weights.stacked().copy()
    active = list(zip(*np.nonzero(W)))
    wmax = float(np.max(np.abs(W), initial=0.0))

    def loss_at(Wc: np.ndarray) -> float:
        return _residual(_chain(PolyMap(_split(Wc, n, order), n), x0, layers), sys, dt)

    best = loss_at(W)
    history = [best]
    done = 0
    for _ in range(sweeps):
        if best <= tol:
            break
        trial = W.copy()
        for idx in active:
            w0 = trial[idx]
            s = rel_bracket * max(abs(w0), 1e-3 * wmax)

            def f(v, idx=idx):
                trial[idx] = v
                return loss_at(trial)

            res = scipy.optimize.minimize_scalar(f, bracket=(w0 - s, w0 + s), method="golden")
            trial[idx] = res.x if res.fun <= f(w0) else w0
        current = loss_at(trial)
        done += 1
        history.append(current)
        if current > best:
            log.info("residual rose from %.6e to %.6e; keeping the previous weights", best, current)
            break
        W, best = trial, current
    mask = BinaryMask.support(weights)
    tuned = TaylorMap(PolyMap(_split(W, n, order), n), dt, f"{shared_map.source_label} tuned")
    return FitReport(tuned, mask, history, done, mask.popcount(), {"layers": layers})


def stack_architecture(spec: Sequence[tuple[int, int, int]]) -> PNN:
    """Untrained chain of polynomial layers ``(order, in_dim, out_dim)``.

    Each layer starts as the projection onto its first ``min(in, out)``
    inputs, so an untrained stack passes those components through.
    """
    spec = list(spec)
    if not spec:
        raise ValueError("need at least one layer")
    layers = []
    for order, n_in, n_out in spec:
        if order < 1 or n_in < 1 or n_out < 1:
            raise ValueError(f"bad layer spec {(order, n_in, n_out)}")
        blocks = [np.zeros((n_out, basis_size(n_in, k))) for k in range(order + 1)]
        k = min(n_in, n_out)
        blocks[1][:k, :k] = np.eye(k)
        layers.append(PolyMap(tuple(blocks), n_in))
    return PNN(tuple(layers))


def _exponent_table(n: int, order: int) -> np.ndarray:
    rows = []
    for k in range(order + 1):
        rows.extend(m.exponents for m in monomial_basis(n, k).indices)
    return np.array(rows, dtype=int)


def _design_jacobian(a: np.ndarray, E: np.ndarray) -> np.ndarray:
    """``d x^[.] / d x`` per sample, shape ``(m, M, n)``."""
    m, n = a.shape
    J = np.empty((m, E.shape[0], n))
    for i in range(n):
        lowered = E.copy()
        lowered[:, i] = np.maximum(lowered[:, i] - 1, 0)
        J[:, :, i] = E[:, i] * np.prod(a[:, None, :] ** lowered[None], axis=2)
    return J


def fit_stack(
    net: PNN,
    data: DataSet,
    epochs: int,
    step: float,
    *,
    batch_size: int = 32,
    seed: int = 0,
    beta1: float = 0.9,
    beta2: float = 0.999,
) -> tuple[PNN, list[float]]:
    """Train all layers of a stack of :class:`PolyMap` jointly with Adamax.

    The loss is the mean squared error of the composed forward pass.
    Returns the trained stack and the per-epoch loss.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not step > 0:
        raise ValueError("step must be positive")
    layers = [l.dense_weights if isinstance(l, TaylorMap) else l for l in net.layers]
    if layers[0].n_in != data.n_in or layers[-1].n_out != data.n_out:
        raise ValueError("stack dimensions do not match the data")
    shapes = [(l.n_in, l.order) for l in layers]
    Ws = [l.stacked().copy() for l in layers]
    Es = [_exponent_table(n, k) for n, k in shapes]
    m1 = [np.zeros_like(W) for W in Ws]
    u = [np.zeros_like(W) for W in Ws]
    rng = np.random.default_rng(seed)
    m = len(data)
    t = 0
    history = []

    def forward(x):
        acts, phis = [x], []
        for W, (_, k) in zip(Ws, shapes):
            phis.append(design_matrix(acts[-1], k))
            acts.append(phis[-1] @ W.T)
        return acts, phis

    for epoch in range(1, epochs + 1):
        for batch in np.array_split(rng.permutation(m), max(1, math.ceil(m / batch_size))):
            acts, phis = forward(data.x_in[batch])
            delta = (2.0 / (len(batch) * data.n_out)) * (acts[-1] - data.x_out[batch])
            grads = [None] * len(Ws)
            for l in range(len(Ws) - 1, -1, -1):
                grads[l] = delta.T @ phis[l]
                if l:
                    dphi = delta @ Ws[l]
                    delta = np.einsum("sm,smi->si", dphi, _design_jacobian(acts[l], Es[l]))
            t += 1
            for l, g in enumerate(grads):
                m1[l] = beta1 * m1[l] + (1 - beta1) * g
                u[l] = np.maximum(beta2 * u[l], np.abs(g))
                Ws[l] = Ws[l] - (step / (1 - beta1**t)) * m1[l] / (u[l] + 1e-12)
        loss = float(np.mean((forward(data.x_in)[0][-1] - data.x_out) ** 2))
        if not math.isfinite(loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch}")
        history.append(loss)
    trained = PNN(tuple(PolyMap(_split(W, n, k), n) for W, (n, k) in zip(Ws, shapes)))
    return trained, history
