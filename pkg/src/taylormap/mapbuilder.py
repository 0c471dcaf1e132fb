"""Taylor maps derived from a polynomial ODE.

Substituting ``x(t) = W(t)(x0)`` into ``x' = F(x)`` and collecting like
monomials of ``x0`` gives an ODE for the weights alone::

    dW/dt = truncate(F o W, order),    W(0) = identity

Integrating it once over ``[0, t_span]`` yields a map that propagates any
initial state over the whole interval.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import MapBuildError
from .odemodel import PolynomialODE
from .polyalg import PolyMap, _offsets, _split, _stack, compose_stacked, monomial_basis, reduced_powers

__all__ = [
    "TaylorMap",
    "BuildConfig",
    "AdaptiveMapFamily",
    "coefficient_rhs",
    "build_map",
    "build_map_family",
    "decade_spans",
]

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True, eq=False)
class TaylorMap:
    """Polynomial propagator over a fixed interval ``t_span``.

    Either ``weights`` (dense blocks ``W_0..W_order``) or ``sparse_linear``
    (a sparse ``W_1`` for large linear systems, no constant term) is set.
    """

    weights: PolyMap | None
    t_span: float
    source_label: str = ""
    sparse_linear: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        if (self.weights is None) == (self.sparse_linear is None):
            raise ValueError("give exactly one of weights or sparse_linear")
        if self.weights is not None and self.weights.n_in != self.weights.n_out:
            raise ValueError("a Taylor map must be square")

    @property
    def n(self) -> int:
        if self.weights is None:
            return self.sparse_linear.shape[0]
        return self.weights.n_in

    @property
    def order(self) -> int:
        return 1 if self.weights is None else self.weights.order

    @property
    def is_sparse(self) -> bool:
        return self.sparse_linear is not None

    @cached_property
    def dense_weights(self) -> PolyMap:
        if self.weights is not None:
            return self.weights
        return PolyMap((np.zeros((self.n, 1)), self.sparse_linear.toarray()), self.n)

    @cached_property
    def _stacked(self) -> np.ndarray:
        return self.weights.stacked()

    @cached_property
    def _exponents(self) -> np.ndarray:
        rows = []
        for k in range(self.order + 1):
            rows.extend(m.exponents for m in monomial_basis(self.n, k).indices)
        return np.array(rows, dtype=float)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"state has length {x.shape[-1]}, map expects {self.n}")
        if self.sparse_linear is not None:
            if x.ndim == 1:
                return self.sparse_linear @ x
            return (self.sparse_linear @ x.reshape(-1, self.n).T).T.reshape(x.shape)
        if x.ndim == 1 and self.n <= 4:
            # small states: one vectorised power beats the degree recursion
            return self._stacked @ np.prod(x**self._exponents, axis=1)
        return np.concatenate(reduced_powers(x, self.order), axis=-1) @ self._stacked.T

    def apply_with_tail(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Image of a single state and the contribution of the top degree alone."""
        x = np.asarray(x, dtype=float)
        if self.is_sparse or x.ndim != 1:
            raise ValueError("apply_with_tail needs a dense map and a single state")
        if self.n <= 4:
            mon = np.prod(x**self._exponents, axis=1)
        else:
            mon = np.concatenate(reduced_powers(x, self.order))
        top = self._stacked.shape[1] - self.weights.coeffs[-1].shape[1]
        return self._stacked @ mon, self._stacked[:, top:] @ mon[top:]

    def nnz(self) -> int:
        return self.sparse_linear.nnz if self.is_sparse else self.weights.nnz()

    def to_dict(self) -> dict:
        d = {"n": self.n, "order": self.order, "t_span": self.t_span, "source_label": self.source_label}
        if self.is_sparse:
            W = self.sparse_linear.tocsr()
            d["sparse_linear"] = {
                "shape": list(W.shape),
                "data": W.data.tolist(),
                "indices": W.indices.tolist(),
                "indptr": W.indptr.tolist(),
            }
        else:
            d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaylorMap":
        if "sparse_linear" in d:
            s = d["sparse_linear"]
            W = sp.csr_matrix((s["data"], s["indices"], s["indptr"]), shape=tuple(s["shape"]))
            return cls(None, float(d["t_span"]), d.get("source_label", ""), sparse_linear=W)
        return cls(PolyMap.from_dict(d["weights"]), float(d["t_span"]), d.get("source_label", ""))


@dataclass(frozen=True)
class BuildConfig:
    order: int
    t_span: float
    substeps: int = 100

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not self.t_span > 0:
            raise ValueError("t_span must be positive")


@dataclass(frozen=True, eq=False)
class AdaptiveMapFamily:
    """Maps of one system for a set of spans, largest first."""

    maps: tuple[TaylorMap, ...]
    system: PolynomialODE | None = field(default=None, repr=False)
    substeps: int = 100

    def __post_init__(self):
        maps = tuple(sorted(self.maps, key=lambda m: -m.t_span))
        if not maps:
            raise ValueError("an adaptive family needs at least one map")
        spans = [m.t_span for m in maps]
        if any(a <= b for a, b in zip(spans, spans[1:])):
            raise ValueError("family spans must be distinct")
        if len({(m.n, m.order) for m in maps}) != 1:
            raise ValueError("all family members must share dimension and order")
        object.__setattr__(self, "maps", maps)

    @property
    def order(self) -> int:
        return self.maps[0].order

    @property
    def n(self) -> int:
        return self.maps[0].n

    @property
    def spans(self) -> list[float]:
        return [m.t_span for m in self.maps]

    def __len__(self) -> int:
        return len(self.maps)

    def to_dict(self) -> dict:
        return {"order": self.order, "maps": [m.to_dict() for m in self.maps]}

    @classmethod
    def from_dict(cls, d: dict, system: PolynomialODE | None = None) -> "AdaptiveMapFamily":
        return cls(tuple(TaylorMap.from_dict(m) for m in d["maps"]), system=system)


def coefficient_rhs(sys: PolynomialODE, W: PolyMap) -> PolyMap:
    """Right-hand side of the weight ODE, ``truncate(F o W, W.order)``."""
    if W.n_out != sys.dim:
        raise ValueError(f"weights have {W.n_out} outputs, system has dim {sys.dim}")
    n, order = W.n_in, W.order
    out = compose_stacked(sys.rhs.coeffs, _stack(W, order), n, order)
    return PolyMap(_split(out, n, order), n)


def _check(W, step: int, substeps: int, label: str) -> None:
    norm = float(np.max(np.abs(W.data if sp.issparse(W) else W), initial=0.0))
    if not np.isfinite(norm) or norm > DIVERGENCE_NORM:
        raise MapBuildError(
            f"{label}: weights diverged at substep {step}/{substeps} (max |W| = {norm:.3e}); "
            "reduce the span or the order"
        )


def build_map(sys: PolynomialODE, cfg: BuildConfig) -> TaylorMap:
    """Integrate the weight ODE from the identity with fixed-step RK4."""
    if sys.is_sparse_linear:
        return _build_sparse_linear(sys, cfg)
    n, order = sys.dim, cfg.order
    outer = sys.rhs.coeffs
    h = cfg.t_span / cfg.substeps

    def f(W):
        return compose_stacked(outer, W, n, order)

    W = np.zeros((n, _offsets(n, order)[-1]))
    W[:, 1 : n + 1] = np.eye(n)
    for step in range(1, cfg.substeps + 1):
        k1 = f(W)
        k2 = f(W + 0.5 * h * k1)
        k3 = f(W + 0.5 * h * k2)
        k4 = f(W + h * k3)
        W = W + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        _check(W, step, cfg.substeps, sys.label)
    return TaylorMap(PolyMap(_split(W, n, order), n), cfg.t_span, f"{sys.label} order={order} span={cfg.t_span!r}")


def _build_sparse_linear(sys: PolynomialODE, cfg: BuildConfig, drop_tol: float = 1e-15) -> TaylorMap:
    """``W' = A W`` for a large sparse linear system.

    One RK4 step of the matrix ODE multiplies by the polynomial
    ``P(hA) = I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24``; the map is
    ``P(hA)^substeps``.  Entries below ``drop_tol`` (relative to the largest)
    are pruned after each product to keep the band narrow.
    """
    if cfg.order > 1:
        log.info("linear system: map order clamped from %d to 1", cfg.order)
    A = sys.linear_operator.tocsr()
    h = cfg.t_span / cfg.substeps
    eye = sp.identity(sys.dim, format="csr")
    hA = (h * A).tocsr()
    term = eye
    step_mat = eye.copy()
    for k in range(1, 5):
        term = (term @ hA) / k
        step_mat = step_mat + term
    step_mat = _prune(step_mat.tocsr(), drop_tol)
    W = eye
    for step in range(1, cfg.substeps + 1):
        W = _prune((step_mat @ W).tocsr(), drop_tol)
        _check(W, step, cfg.substeps, sys.label)
    return TaylorMap(None, cfg.t_span, f"{sys.label} order=1 span={cfg.t_span!r}", sparse_linear=W)


def _prune(W: sp.csr_matrix, drop_tol: float) -> sp.csr_matrix:
    if W.nnz:
        W.data[np.abs(W.data) < drop_tol * np.abs(W.data).max()] = 0.0
        W.eliminate_zeros()
    return W


def build_map_family(
    sys: PolynomialODE, order: int, spans: Sequence[float], substeps: int = 100
) -> AdaptiveMapFamily:
    """One map per span, sorted from the largest span down."""
    spans = [float(s) for s in spans]
    if not spans:
        raise ValueError("spans must be non-empty")
    if any(not s > 0 for s in spans):
        raise ValueError("spans must be positive")
    if len(set(spans)) != len(spans):
        raise ValueError("spans must be distinct")
    maps = []
    for span in sorted(spans, reverse=True):
        try:
            maps.append(build_map(sys, BuildConfig(order, span, substeps)))
        except MapBuildError as exc:
            raise MapBuildError(f"family member with span {span!r} failed: {exc}") from exc
    return AdaptiveMapFamily(tuple(maps), system=sys, substeps=substeps)


def decade_spans(largest: float, smallest: float) -> list[float]:
    """``largest, largest/10, ...`` down to ``smallest`` inclusive."""
    e_hi = int(round(np.log10(largest)))
    e_lo = int(round(np.log10(smallest)))
    return [float(f"1e{e}") for e in range(e_hi, e_lo - 1, -1)]
