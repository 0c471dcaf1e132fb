"""Autonomous ODE systems with polynomial right-hand sides.

``x' = sum_k P_k x^[k]`` with constant coefficient blocks ``P_k``, plus
constructors for the worked examples: the cylindrical deflector, the
Rayleigh-Plesset bubble, the Van der Pol oscillator and the
characteristics form of a semi-discretised Burgers equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .polyalg import PolyMap, basis_size, monomial_basis

__all__ = [
    "PolynomialODE",
    "DeflectorParams",
    "RayleighPlessetParams",
    "BurgersGrid",
    "make_system",
    "eval_rhs",
    "deflector",
    "rayleigh_plesset",
    "van_der_pol",
    "burgers_semidiscrete",
    "periodic_laplacian",
    "system_from_label",
]


@dataclass(frozen=True, eq=False)
class PolynomialODE:
    """``x' = rhs(x)``.

    Large linear systems (Burgers) keep their right-hand side as a sparse
    matrix in ``linear_operator``; ``rhs`` is then materialised densely only
    on request.
    """

    dim: int
    label: str = "custom"
    polymap: PolyMap | None = None
    linear_operator: sp.csr_matrix | None = None
    params: object = None

    def __post_init__(self):
        if (self.polymap is None) == (self.linear_operator is None):
            raise ValueError("give exactly one of polymap or linear_operator")
        if self.polymap is not None:
            if self.polymap.n_in != self.dim or self.polymap.n_out != self.dim:
                raise ValueError("right-hand side must map R^dim to R^dim")
            if self.polymap.order < 1:
                raise ValueError("right-hand side needs order >= 1")
        elif self.linear_operator.shape != (self.dim, self.dim):
            raise ValueError("linear operator has the wrong shape")

    @property
    def is_sparse_linear(self) -> bool:
        return self.linear_operator is not None

    @cached_property
    def rhs(self) -> PolyMap:
        if self.polymap is not None:
            return self.polymap
        return PolyMap((np.zeros((self.dim, 1)), self.linear_operator.toarray()), self.dim)

    @property
    def order(self) -> int:
        return 1 if self.is_sparse_linear else self.polymap.order

    def __call__(self, x) -> np.ndarray:
        return eval_rhs(self, x)


def make_system(dim: int, blocks: Sequence, label: str = "custom", params=None) -> PolynomialODE:
    """System from per-degree coefficient matrices, degree 0 first."""
    mats = []
    for k, b in enumerate(blocks):
        b = np.asarray(b, dtype=float)
        expected = (dim, basis_size(dim, k))
        if b.shape != expected:
            raise ValueError(f"degree-{k} block has shape {b.shape}, expected {expected}")
        mats.append(b)
    if len(mats) < 2:
        mats += [np.zeros((dim, basis_size(dim, k))) for k in range(len(mats), 2)]
    return PolynomialODE(dim, label, polymap=PolyMap(tuple(mats), dim), params=params)


def eval_rhs(sys: PolynomialODE, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sys.dim:
        raise ValueError(f"state has length {x.shape[-1]}, system has dim {sys.dim}")
    if sys.is_sparse_linear:
        return (sys.linear_operator @ x.reshape(-1, sys.dim).T).T.reshape(x.shape)
    return sys.polymap(x)


@dataclass(frozen=True)
class DeflectorParams:
    """Cylindrical deflector: bending radius ``R`` [m], bending angle ``theta`` [rad]."""

    R: float = 10.0
    theta: float = np.pi / 4

    def __post_init__(self):
        if not (self.R > 0 and self.theta > 0):
            raise ValueError("R and theta must be positive")


def deflector(p: DeflectorParams = DeflectorParams()) -> PolynomialODE:
    """``x' = y``, ``y' = -2x + x**2/R`` (independent variable: bending angle)."""
    lin = np.array([[0.0, 1.0], [-2.0, 0.0]])
    quad = np.zeros((2, 3))
    quad[1, 0] = 1.0 / p.R
    return make_system(2, [np.zeros((2, 1)), lin, quad], label="deflector", params=p)


@dataclass(frozen=True)
class RayleighPlessetParams:
    """Bubble in an incompressible liquid, SI units.

    Density defaults to water at 20 C.
    """

    p_B: float = 2300.0
    p_inf: float = 1e5
    rho: float = 998.2
    R0: float = 1e-3

    def __post_init__(self):
        if not (self.rho > 0 and self.R0 > 0):
            raise ValueError("rho and R0 must be positive")

    @property
    def initial_state(self) -> np.ndarray:
        return np.array([self.R0, 0.0, 1.0 / self.R0])


def rayleigh_plesset(p: RayleighPlessetParams = RayleighPlessetParams(), form: str = "physical") -> PolynomialODE:
    """Rayleigh-Plesset equation over the state ``(R, dR/dt, 1/R)``.

    ``form="physical"`` follows ``R R'' + 1.5 R'**2 = (p_B - p_inf)/rho``::

        y1' = y2
        y2' = (p_B - p_inf)/rho * y3 - 1.5 * y2**2 * y3
        y3' = -y3**2 * y2

    ``form="printed"`` keeps the variant ``y2' = -(p_B - p_inf)/rho * y3 -
    1.5 * y2**2``, which does not divide the right-hand side by ``R`` and
    does not collapse for ``p_B < p_inf``.
    """
    dp = (p.p_B - p.p_inf) / p.rho
    blocks = [np.zeros((3, basis_size(3, k))) for k in range(4)]
    blocks[1][0, 1] = 1.0
    b3 = monomial_basis(3, 3)
    blocks[3][2, b3.index_of((0, 1, 2))] = -1.0
    if form == "physical":
        blocks[1][1, 2] = dp
        blocks[3][1, b3.index_of((0, 2, 1))] = -1.5
    elif form == "printed":
        blocks[1][1, 2] = -dp
        blocks[2][1, monomial_basis(3, 2).index_of((0, 2, 0))] = -1.5
    else:
        raise ValueError(f"unknown form {form!r}")
    return make_system(3, blocks, label="rp", params=p)


def van_der_pol() -> PolynomialODE:
    """``x' = y``, ``y' = y - x - x**2 y``."""
    lin = np.array([[0.0, 1.0], [-1.0, 1.0]])
    cubic = np.zeros((2, 4))
    cubic[1, monomial_basis(2, 3).index_of((2, 1))] = -1.0
    return make_system(2, [np.zeros((2, 1)), lin, np.zeros((2, 3)), cubic], label="vdp")


@dataclass(frozen=True)
class BurgersGrid:
    """``N`` uniform nodes on ``[0, 2*pi)`` with viscosity ``nu``.

    ``boundary`` is ``"periodic"`` or ``"dirichlet"``.  With Dirichlet
    boundaries the first and last node carry externally supplied values and
    have no dynamics of their own.
    """

    N: int = 1000
    nu: float = 0.05
    boundary: str = "periodic"
    length: float = field(default=2 * np.pi, repr=False)

    def __post_init__(self):
        if self.N < 3:
            raise ValueError(f"Burgers grid needs N >= 3, got {self.N}")
        if not self.nu > 0:
            raise ValueError("viscosity must be positive")
        if self.boundary not in ("periodic", "dirichlet"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def dx(self) -> float:
        return self.length / self.N

    @property
    def x_nodes(self) -> np.ndarray:
        return np.arange(self.N) * self.dx


def periodic_laplacian(N: int, dx: float) -> sp.csr_matrix:
    """Periodic centred second difference ``(u[i+1] - 2u[i] + u[i-1]) / dx**2``."""
    main = np.full(N, -2.0)
    off = np.ones(N - 1)
    L = sp.diags([off, main, off], [-1, 0, 1], shape=(N, N), format="lil")
    L[0, N - 1] = 1.0
    L[N - 1, 0] = 1.0
    return (L.tocsr() / dx**2).tocsr()


def burgers_semidiscrete(g: BurgersGrid) -> PolynomialODE:
    """Characteristics form over ``Z = (X, U)``: ``X' = U``, ``U' = nu L U``.

    ``L`` is the centred second difference on the initial uniform spacing,
    periodic or with the two boundary rows zeroed (Dirichlet).
    """
    N = g.N
    L = periodic_laplacian(N, g.dx)
    if g.boundary == "dirichlet":
        keep = np.ones(N)
        keep[[0, -1]] = 0.0
        L = (sp.diags(keep) @ L).tocsr()
        L.eliminate_zeros()
    A = sp.bmat([[sp.csr_matrix((N, N)), sp.eye(N)], [None, g.nu * L]], format="csr", dtype=float)
    return PolynomialODE(2 * N, "burgers", linear_operator=A, params=g)


def system_from_label(label: str, **params) -> PolynomialODE:
    """Named example system; unknown keyword parameters are rejected."""
    label = label.lower()
    if label == "deflector":
        return deflector(DeflectorParams(**params))
    if label in ("rp", "rayleigh-plesset", "rayleigh_plesset"):
        form = params.pop("form", "physical")
        return rayleigh_plesset(RayleighPlessetParams(**params), form=form)
    if label in ("vdp", "van-der-pol", "van_der_pol"):
        if params:
            raise TypeError(f"vdp takes no parameters, got {sorted(params)}")
        return van_der_pol()
    if label == "burgers":
        return burgers_semidiscrete(BurgersGrid(**params))
    raise ValueError(f"unknown system {label!r}")
