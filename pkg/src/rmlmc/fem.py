"""Piecewise-linear finite elements for -(a(x) v')' = 100 x on [0, 1], v(0) = v(1) = 0.

The public functions (``assemble``, ``solve_tridiagonal``, ``evaluate_solution``,
``forward_map``) are the readable path. ``ForwardTables`` together with
``observe`` is the precomputed path used inside the Markov chains; both
share the same quadrature and Thomas kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

MAX_MESH_EXPONENT = 30
DEFAULT_OFFSET = 3

# 2-point Gauss-Legendre on [-1, 1]
_GAUSS_POINTS = np.array([-1.0 / math.sqrt(3.0), 1.0 / math.sqrt(3.0)])
_GAUSS_WEIGHTS = np.array([1.0, 1.0])


class SingularSystemError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MeshLevel:
    """Uniform mesh on [0, 1] with ``2**(level + offset)`` elements."""

    level: int
    offset: int = DEFAULT_OFFSET

    @property
    def exponent(self) -> int:
        return self.level + self.offset

    @property
    def width(self) -> float:
        return math.ldexp(1.0, -self.exponent)

    @property
    def interior_nodes(self) -> int:
        return (1 << self.exponent) - 1

    @property
    def elements(self) -> int:
        return 1 << self.exponent

    def nodes(self) -> np.ndarray:
        """Interior node coordinates ``x_i = i * h``."""
        return np.arange(1, self.elements) * self.width


def build_mesh(level: int, offset: int = DEFAULT_OFFSET) -> MeshLevel:
    if level < 0 or offset < 0:
        raise ValueError(f"level and offset must be >= 0, got {level}, {offset}")
    if level + offset > MAX_MESH_EXPONENT:
        raise ValueError(
            f"level + offset = {level + offset} exceeds the mesh guard {MAX_MESH_EXPONENT}"
        )
    return MeshLevel(int(level), int(offset))


def _basis(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.stack([np.sin(np.pi * x), np.cos(2.0 * np.pi * x)])


@dataclass(frozen=True)
class DiffusionField:
    """Coefficient ``mean + sum_j u_j * scales[j] * phi_j(x)``.

    The basis is fixed to ``phi_1 = sin(pi x)`` and ``phi_2 = cos(2 pi x)``,
    so at most two scales are allowed.
    """

    mean: float = 0.15
    scales: tuple[float, ...] = field(default=(0.1, 0.025))

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not 1 <= len(self.scales) <= 2:
            raise ValueError(f"scales must have 1 or 2 entries, got {len(self.scales)}")
        if self.mean <= 0:
            raise ValueError(f"mean must be positive, got {self.mean}")
        if self.lower_bound <= 0:
            raise ValueError(
                f"mean - sum(|scales|) = {self.lower_bound} must be positive (ellipticity)"
            )

    @property
    def dimension(self) -> int:
        return len(self.scales)

    @property
    def lower_bound(self) -> float:
        return self.mean - sum(abs(s) for s in self.scales)

    def basis(self, x) -> np.ndarray:
        """Basis values, shape ``(J,) + shape(x)``."""
        return _basis(x)[: self.dimension]


def _check_latent(field_: DiffusionField, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (field_.dimension,):
        raise ValueError(f"latent point must have shape ({field_.dimension},), got {u.shape}")
    if not np.all(np.abs(u) <= 1.0):
        raise ValueError(f"latent point {u} lies outside [-1, 1]^{field_.dimension}")
    return u


def evaluate_coefficient(field_: DiffusionField, u, x):
    u = _check_latent(field_, u)
    scaled = np.asarray(field_.scales) * u
    value = field_.mean + np.tensordot(scaled, field_.basis(x), axes=1)
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True)
class TridiagonalSystem:
    """Row ``k`` reads ``sub[k] x[k-1] + diag[k] x[k] + sup[k] x[k+1] = rhs[k]``.

    ``sub[0]`` and ``sup[-1]`` are zero padding.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def __len__(self):
        return len(self.diag)

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub[1:], -1) + np.diag(self.sup[:-1], 1)


def element_averages(mesh: MeshLevel, field_: DiffusionField) -> np.ndarray:
    """Gauss-Legendre average of ``scales[j] * phi_j`` over each element, shape (elements, J)."""
    h = mesh.width
    left = np.arange(mesh.elements) * h
    q = left[:, None] + 0.5 * h * (1.0 + _GAUSS_POINTS[None, :])
    vals = field_.basis(q) * np.asarray(field_.scales)[:, None, None]
    return (vals @ _GAUSS_WEIGHTS).T / _GAUSS_WEIGHTS.sum()


def load_vector(mesh: MeshLevel) -> np.ndarray:
    # exact for f(x) = 100 x against hat functions
    return 100.0 * mesh.nodes() * mesh.width


def assemble(mesh: MeshLevel, field_: DiffusionField, u) -> TridiagonalSystem:
    u = _check_latent(field_, u)
    stiff = (field_.mean + element_averages(mesh, field_) @ u) / mesh.width
    diag = stiff[:-1] + stiff[1:]
    sub = np.concatenate(([0.0], -stiff[1:-1]))
    sup = np.concatenate((-stiff[1:-1], [0.0]))
    return TridiagonalSystem(sub, diag, sup, load_vector(mesh))


@njit(cache=True, nogil=True)
def _thomas(sub, diag, sup, rhs):
    n = diag.shape[0]
    c = np.empty(n)
    x = np.empty(n)
    pivot = diag[0]
    if pivot == 0.0:
        raise ZeroDivisionError("zero pivot in tridiagonal solve")
    c[0] = sup[0] / pivot
    x[0] = rhs[0] / pivot
    for k in range(1, n):
        pivot = diag[k] - sub[k] * c[k - 1]
        if pivot == 0.0:
            raise ZeroDivisionError("zero pivot in tridiagonal solve")
        c[k] = sup[k] / pivot
        x[k] = (rhs[k] - sub[k] * x[k - 1]) / pivot
    for k in range(n - 2, -1, -1):
        x[k] -= c[k] * x[k + 1]
    return x


def solve_tridiagonal(system: TridiagonalSystem) -> np.ndarray:
    """Thomas elimination without pivoting; O(n)."""
    arrays = [np.ascontiguousarray(a, dtype=float) for a in
              (system.sub, system.diag, system.sup, system.rhs)]
    n = len(arrays[1])
    if n == 0 or any(len(a) != n for a in arrays):
        raise ValueError("tridiagonal bands and rhs must share a nonzero length")
    try:
        return _thomas(*arrays)
    except ZeroDivisionError as err:
        raise SingularSystemError(str(err)) from None


def evaluate_solution(mesh: MeshLevel, nodal, x):
    """Piecewise-linear interpolant of the nodal values (zero at both ends)."""
    x_arr = np.asarray(x, dtype=float)
    if np.any((x_arr < 0.0) | (x_arr > 1.0)):
        raise ValueError("evaluation points must lie in [0, 1]")
    grid = np.concatenate(([0.0], mesh.nodes(), [1.0]))
    values = np.concatenate(([0.0], np.asarray(nodal, dtype=float), [0.0]))
    out = np.interp(x_arr, grid, values)
    return float(out) if out.ndim == 0 else out


def forward_map(mesh: MeshLevel, field_: DiffusionField, u, points: Sequence[float]) -> np.ndarray:
    """``G^l(u)``: the FEM solution sampled at ``points``."""
    nodal = solve_tridiagonal(assemble(mesh, field_, u))
    return np.atleast_1d(evaluate_solution(mesh, nodal, points))


class ForwardTables(NamedTuple):
    """Everything ``observe`` needs for one mesh, precomputed once."""

    mean: float
    inv_width: float
    elem_avg: np.ndarray   # (elements, J)
    load: np.ndarray       # (interior_nodes,)
    obs_index: np.ndarray  # element containing each observation point
    obs_weight: np.ndarray  # position within that element, in [0, 1]


def forward_tables(mesh: MeshLevel, field_: DiffusionField, points) -> ForwardTables:
    points = np.asarray(points, dtype=float)
    if np.any((points < 0.0) | (points > 1.0)):
        raise ValueError("observation points must lie in [0, 1]")
    scaled = points * mesh.elements
    index = np.minimum(np.floor(scaled).astype(np.int64), mesh.elements - 1)
    return ForwardTables(
        float(field_.mean),
        float(mesh.elements),
        np.ascontiguousarray(element_averages(mesh, field_)),
        load_vector(mesh),
        index,
        scaled - index,
    )


@njit(cache=True, nogil=True)
def observe(u, tables):
    """Assemble, solve and sample at the observation points in one pass."""
    elem_avg = tables.elem_avg
    ne = elem_avg.shape[0]
    stiff = np.empty(ne)
    for e in range(ne):
        a = tables.mean
        for j in range(u.shape[0]):
            a += u[j] * elem_avg[e, j]
        stiff[e] = a * tables.inv_width
    n = ne - 1
    sub = np.empty(n)
    diag = np.empty(n)
    sup = np.empty(n)
    for k in range(n):
        diag[k] = stiff[k] + stiff[k + 1]
        sub[k] = -stiff[k] if k > 0 else 0.0
        sup[k] = -stiff[k + 1] if k < n - 1 else 0.0
    nodal = _thomas(sub, diag, sup, tables.load)
    m = tables.obs_index.shape[0]
    out = np.empty(m)
    for i in range(m):
        e = tables.obs_index[i]
        t = tables.obs_weight[i]
        left = nodal[e - 1] if e > 0 else 0.0
        right = nodal[e] if e < n else 0.0
        out[i] = (1.0 - t) * left + t * right
    return out
