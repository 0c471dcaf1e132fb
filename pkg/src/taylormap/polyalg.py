"""Reduced Kronecker-power monomial algebra.

A state vector ``x`` of length ``n`` has a *reduced* k-th power ``x^[k]``:
the vector of all distinct degree-k monomials of its components, ordered
graded-lexicographically with ``x1 > x2 > ...``.  For ``n = 2``::

    x^[2] = (x1**2, x1*x2, x2**2)
    x^[3] = (x1**3, x1**2*x2, x1*x2**2, x2**3)

Polynomial maps are stored as one dense coefficient block per degree
(:class:`PolyMap`).  Composition works degree by degree on the reduced
bases and never builds a full ``n**k`` Kronecker tensor.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "MultiIndex",
    "MonomialBasis",
    "PolyMap",
    "basis_size",
    "monomial_basis",
    "reduced_power",
    "reduced_powers",
    "apply_polymap",
    "compose_truncate",
    "lift_power",
]


@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector of a single monomial."""

    exponents: tuple[int, ...]

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def __str__(self) -> str:
        parts = []
        for i, e in enumerate(self.exponents, start=1):
            if e == 1:
                parts.append(f"x{i}")
            elif e > 1:
                parts.append(f"x{i}^{e}")
        return "*".join(parts) or "1"


@dataclass(frozen=True)
class MonomialBasis:
    """All degree-``k`` monomials in ``n`` variables, graded-lex ordered.

    ``combos[j]`` lists the variable indices of monomial ``j`` in
    non-decreasing order, e.g. ``x1**2*x2 -> (0, 0, 1)``.  The ``first`` and
    ``parent`` arrays give the recursion ``x^[k][j] = x[first[j]] *
    x^[k-1][parent[j]]`` used for fast evaluation.
    """

    n: int
    k: int
    combos: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.combos)

    def __len__(self) -> int:
        return len(self.combos)

    @property
    def indices(self) -> list[MultiIndex]:
        out = []
        for c in self.combos:
            e = [0] * self.n
            for v in c:
                e[v] += 1
            out.append(MultiIndex(tuple(e)))
        return out

    def index_of(self, exponents: Sequence[int]) -> int:
        combo = tuple(v for v, e in enumerate(exponents) for _ in range(e))
        return _combo_lookup(self.n, self.k)[combo]

    @property
    def first(self) -> np.ndarray:
        return _recursion_arrays(self.n, self.k)[0]

    @property
    def parent(self) -> np.ndarray:
        return _recursion_arrays(self.n, self.k)[1]


def basis_size(n: int, k: int) -> int:
    return comb(n + k - 1, k)


@lru_cache(maxsize=None)
def monomial_basis(n: int, k: int) -> MonomialBasis:
    """Enumerate the degree-``k`` monomials over ``n`` variables."""
    if n < 1:
        raise ValueError(f"state dimension must be positive, got n={n}")
    if k < 0:
        raise ValueError(f"degree must be non-negative, got k={k}")
    # combinations_with_replacement yields lexicographic combos, which is
    # graded-lex on exponents with x1 > x2 > ...
    combos = tuple(itertools.combinations_with_replacement(range(n), k))
    return MonomialBasis(n, k, combos)


@lru_cache(maxsize=None)
def _combo_lookup(n: int, k: int) -> dict[tuple[int, ...], int]:
    return {c: j for j, c in enumerate(monomial_basis(n, k).combos)}


@lru_cache(maxsize=None)
def _recursion_arrays(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    if k == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    combos = monomial_basis(n, k).combos
    lookup = _combo_lookup(n, k - 1)
    first = np.array([c[0] for c in combos], dtype=np.intp)
    parent = np.array([lookup[c[1:]] for c in combos], dtype=np.intp)
    return first, parent


@lru_cache(maxsize=None)
def _product_scatter(n: int, a: int, b: int) -> sp.csr_matrix:
    """Sparse matrix sending the flattened outer product of x^[a] and x^[b]
    onto x^[a+b]."""
    ca = monomial_basis(n, a).combos
    cb = monomial_basis(n, b).combos
    lookup = _combo_lookup(n, a + b)
    cols = np.empty(len(ca) * len(cb), dtype=np.intp)
    pos = 0
    for u in ca:
        for v in cb:
            cols[pos] = lookup[tuple(sorted(u + v))]
            pos += 1
    rows = np.arange(cols.size)
    data = np.ones(cols.size)
    return sp.csr_matrix((data, (rows, cols)), shape=(cols.size, basis_size(n, a + b)))


def reduced_power(x, k: int) -> np.ndarray:
    """Reduced k-th Kronecker power of ``x``.

    ``x`` may carry leading batch axes; the last axis is the state.

    >>> reduced_power([2.0, 3.0], 2)
    array([4., 6., 9.])
    """
    x = np.asarray(x, dtype=float)
    if k < 0:
        raise ValueError("k must be non-negative")
    return reduced_powers(x, k)[k]


def reduced_powers(x: np.ndarray, order: int) -> list[np.ndarray]:
    """``[x^[0], x^[1], ..., x^[order]]`` built by the monomial recursion."""
    n = x.shape[-1]
    out = [np.ones(x.shape[:-1] + (1,))]
    for k in range(1, order + 1):
        first, parent = _recursion_arrays(n, k)
        out.append(x[..., first] * out[-1][..., parent])
    return out


@dataclass(frozen=True, eq=False)
class PolyMap:
    """Polynomial map ``R^n_in -> R^n_out`` with one block per degree.

    ``coeffs[k]`` has shape ``(n_out, basis_size(n_in, k))`` and multiplies
    ``x^[k]``.
    """

    coeffs: tuple[np.ndarray, ...]
    n_in: int

    def __post_init__(self):
        blocks = tuple(np.array(c, dtype=float) for c in self.coeffs)
        if not blocks:
            raise ValueError("a PolyMap needs at least the degree-0 block")
        n_out = blocks[0].shape[0] if blocks[0].ndim == 2 else -1
        for k, c in enumerate(blocks):
            expected = (n_out, basis_size(self.n_in, k))
            if c.ndim != 2 or c.shape != expected:
                raise ValueError(
                    f"degree-{k} block has shape {c.shape}, expected {expected}"
                )
            c.setflags(write=False)
        object.__setattr__(self, "coeffs", blocks)

    @property
    def n_out(self) -> int:
        return self.coeffs[0].shape[0]

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def zeros(cls, n_in: int, n_out: int, order: int) -> "PolyMap":
        return cls(
            tuple(np.zeros((n_out, basis_size(n_in, k))) for k in range(order + 1)),
            n_in,
        )

    @classmethod
    def identity(cls, n: int, order: int = 1) -> "PolyMap":
        blocks = [np.zeros((n, basis_size(n, k))) for k in range(max(order, 1) + 1)]
        blocks[1] = np.eye(n)
        return cls(tuple(blocks), n)

    @classmethod
    def from_blocks(cls, blocks: Sequence, n_in: int | None = None) -> "PolyMap":
        """Build from per-degree blocks, inferring ``n_in`` from the linear block."""
        blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
        if n_in is None:
            if len(blocks) < 2:
                raise ValueError("cannot infer n_in without a linear block")
            n_in = blocks[1].shape[1]
        return cls(tuple(blocks), n_in)

    def truncated(self, order: int) -> "PolyMap":
        if order <= self.order:
            return PolyMap(self.coeffs[: order + 1], self.n_in)
        extra = tuple(
            np.zeros((self.n_out, basis_size(self.n_in, k)))
            for k in range(self.order + 1, order + 1)
        )
        return PolyMap(self.coeffs + extra, self.n_in)

    def __call__(self, x) -> np.ndarray:
        return apply_polymap(self, x)

    def __add__(self, other: "PolyMap") -> "PolyMap":
        order = max(self.order, other.order)
        a, b = self.truncated(order), other.truncated(order)
        return PolyMap(tuple(x + y for x, y in zip(a.coeffs, b.coeffs)), self.n_in)

    def scaled(self, factor: float) -> "PolyMap":
        return PolyMap(tuple(factor * c for c in self.coeffs), self.n_in)

    def stacked(self) -> np.ndarray:
        """All blocks side by side, shape ``(n_out, total monomials)``."""
        return np.hstack(self.coeffs)

    def norm(self) -> float:
        return float(max(np.max(np.abs(c), initial=0.0) for c in self.coeffs))

    def nnz(self) -> int:
        return int(sum(np.count_nonzero(c) for c in self.coeffs))

    def allclose(self, other: "PolyMap", atol: float = 0.0, rtol: float = 0.0) -> bool:
        order = max(self.order, other.order)
        a, b = self.truncated(order), other.truncated(order)
        return all(np.allclose(x, y, atol=atol, rtol=rtol) for x, y in zip(a.coeffs, b.coeffs))

    def to_dict(self) -> dict:
        return {
            "n_in": self.n_in,
            "n_out": self.n_out,
            "order": self.order,
            "coeffs": [c.tolist() for c in self.coeffs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolyMap":
        n_in, n_out = int(d["n_in"]), int(d["n_out"])
        blocks = []
        for k, rows in enumerate(d["coeffs"]):
            blocks.append(np.asarray(rows, dtype=float).reshape(n_out, basis_size(n_in, k)))
        pm = cls(tuple(blocks), n_in)
        if pm.order != int(d.get("order", pm.order)):
            raise ValueError("declared order does not match the number of blocks")
        return pm


def apply_polymap(p: PolyMap, x) -> np.ndarray:
    """Evaluate ``sum_k coeffs[k] @ x^[k]``; batches along leading axes."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.n_in:
        raise ValueError(f"input has length {x.shape[-1]}, map expects {p.n_in}")
    powers = reduced_powers(x, p.order)
    out = powers[0] @ p.coeffs[0].T
    for k in range(1, p.order + 1):
        out = out + powers[k] @ p.coeffs[k].T
    return out


@lru_cache(maxsize=None)
def _offsets(n: int, order: int) -> tuple[int, ...]:
    """Column offsets of each degree block inside a stacked coefficient matrix."""
    out = [0]
    for k in range(order + 1):
        out.append(out[-1] + basis_size(n, k))
    return tuple(out)


@lru_cache(maxsize=None)
def _stacked_product(n: int, order: int) -> sp.csr_matrix:
    """Sparse ``(M, M*M)`` matrix taking the flattened outer product of two
    stacked monomial vectors (degrees ``0..order``) to their stacked
    product, with degrees above ``order`` dropped."""
    off = _offsets(n, order)
    M = off[-1]
    rows, cols = [], []
    for a in range(order + 1):
        for b in range(order + 1 - a):
            scatter = _product_scatter(n, a, b).tocoo()
            ia, ib = np.divmod(scatter.row, basis_size(n, b))
            cols.append((off[a] + ia) * M + off[b] + ib)
            rows.append(off[a + b] + scatter.col)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(M, M * M))


def _mul_stacked(a: np.ndarray, b: np.ndarray, n: int, order: int) -> np.ndarray:
    """Row-wise product of stacked polynomials ``a``, ``b`` of shape ``(rows, M)``."""
    outer = (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)
    return (_stacked_product(n, order) @ outer.T).T


def _lifts_stacked(inner: np.ndarray, n: int, m: int, j_max: int, order: int) -> list[np.ndarray]:
    """Stacked blocks of (inner(x))^[j], j = 0..j_max.

    ``inner`` is the stacked ``(m, M)`` coefficient matrix of a map from
    ``n`` variables, already truncated at ``order``.
    """
    unit = np.zeros((1, inner.shape[1]))
    unit[0, 0] = 1.0
    lifts = [unit]
    if j_max >= 1:
        lifts.append(inner)
    for j in range(2, j_max + 1):
        first, parent = _recursion_arrays(m, j)
        lifts.append(_mul_stacked(inner[first], lifts[-1][parent], n, order))
    return lifts


def _stack(p: PolyMap, order: int) -> np.ndarray:
    return np.hstack(p.truncated(order).coeffs)


def _split(mat: np.ndarray, n: int, order: int) -> tuple[np.ndarray, ...]:
    off = _offsets(n, order)
    return tuple(mat[:, off[k] : off[k + 1]] for k in range(order + 1))


def compose_stacked(outer: tuple[np.ndarray, ...], inner: np.ndarray, n: int, order: int) -> np.ndarray:
    """Stacked form of :func:`compose_truncate`.

    ``outer`` holds the per-degree blocks of the outer map, ``inner`` the
    stacked ``(m, M)`` matrix of the inner map over ``n`` variables.
    """
    lifts = _lifts_stacked(inner, n, inner.shape[0], len(outer) - 1, order)
    out = np.zeros((outer[0].shape[0], inner.shape[1]))
    for j, block in enumerate(outer):
        if block.any():
            out += block @ lifts[j]
    return out


def lift_power(inner: PolyMap, j: int, order: int) -> PolyMap:
    """Polynomial map ``x -> (inner(x))^[j]`` truncated at degree ``order``."""
    if j < 0:
        raise ValueError("j must be non-negative")
    n = inner.n_in
    lifts = _lifts_stacked(_stack(inner, order), n, inner.n_out, j, order)
    return PolyMap(_split(lifts[j], n, order), n)


def compose_truncate(outer: PolyMap, inner: PolyMap, order: int) -> PolyMap:
    """``x -> outer(inner(x))`` with monomials above ``order`` discarded."""
    if outer.n_in != inner.n_out:
        raise ValueError(
            f"cannot compose: outer expects {outer.n_in} inputs, inner yields {inner.n_out}"
        )
    if order < 0:
        raise ValueError("order must be non-negative")
    n = inner.n_in
    out = compose_stacked(outer.coeffs, _stack(inner, order), n, order)
    return PolyMap(_split(out, n, order), n)
