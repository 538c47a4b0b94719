"""Elliptic Bayesian inverse problem: prior transform, data, log-density and score."""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit

from .fem import (
    DEFAULT_OFFSET,
    DiffusionField,
    ForwardTables,
    MeshLevel,
    build_mesh,
    forward_map,
    forward_tables,
    observe,
)

DEFAULT_X_TRUE = (0.6, -0.4)
FILE_FORMAT = "rmlmc-observations/1"


def observation_points(m: int = 50) -> np.ndarray:
    """``x_i = 0.01 + 0.02 (i - 1)`` for ``i = 1..m``."""
    return 0.01 + 0.02 * np.arange(m)


@njit(cache=True, nogil=True)
def _to_uniform(z):
    out = np.empty_like(z)
    for j in range(z.shape[0]):
        out[j] = math.erf(z[j] / math.sqrt(2.0))
    return out


def transform_prior(z) -> np.ndarray:
    """Map a standard-normal point to the uniform prior: ``u = 2 Phi(z) - 1``."""
    z = np.ascontiguousarray(z, dtype=float)
    return _to_uniform(z.reshape(-1)).reshape(z.shape)


@dataclass(frozen=True)
class LatentState:
    z: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return transform_prior(self.z)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Synthetic data ``y = G^{gen_level}(x_true) + noise`` plus its provenance.

    Instances compare by identity; they are used as cache keys for the
    per-level forward tables.
    """

    points: np.ndarray
    data: np.ndarray
    precision_true: float = 1.0
    gen_level: int = 10
    gen_seed: int = 0
    x_true: tuple[float, ...] = DEFAULT_X_TRUE
    offset: int = DEFAULT_OFFSET
    field: DiffusionField = field(default_factory=DiffusionField)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        data = np.asarray(self.data, dtype=float)
        if points.ndim != 1 or points.shape != data.shape:
            raise ValueError("points and data must be 1-D of equal length")
        if np.any(np.diff(points) <= 0) or points[0] < 0 or points[-1] > 1:
            raise ValueError("points must be strictly increasing within [0, 1]")
        points.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "x_true", tuple(float(v) for v in self.x_true))

    @property
    def m(self) -> int:
        return len(self.data)

    def mesh(self, level: int) -> MeshLevel:
        return build_mesh(level, self.offset)

    def to_dict(self) -> dict:
        return {
            "format": FILE_FORMAT,
            "seed": int(self.gen_seed),
            "theta": float(self.precision_true),
            "x_true": list(self.x_true),
            "gen_level": int(self.gen_level),
            "offset": int(self.offset),
            "field": {"mean": self.field.mean, "scales": list(self.field.scales)},
            "m": self.m,
            "points": self.points.tolist(),
            "y": self.data.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ObservationSet":
        if doc.get("format") != FILE_FORMAT:
            raise ValueError(f"unknown observation file format {doc.get('format')!r}")
        if len(doc["y"]) != doc["m"]:
            raise ValueError(f"m = {doc['m']} but y has {len(doc['y'])} entries")
        fld = doc.get("field", {})
        return cls(
            points=np.array(doc["points"], dtype=float),
            data=np.array(doc["y"], dtype=float),
            precision_true=float(doc["theta"]),
            gen_level=int(doc["gen_level"]),
            gen_seed=int(doc["seed"]),
            x_true=tuple(doc["x_true"]),
            offset=int(doc.get("offset", DEFAULT_OFFSET)),
            field=DiffusionField(**fld) if fld else DiffusionField(),
        )


def _encode(obj) -> str:
    # repr(float) is the shortest exact round-trip form; keep 17 digits for parity
    # with other readers.
    def fmt(v):
        if isinstance(v, float):
            return format(v, ".17g")
        if isinstance(v, dict):
            return "{" + ", ".join(f"{json.dumps(k)}: {fmt(x)}" for k, x in v.items()) + "}"
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return json.dumps(v)

    return fmt(obj) + "\n"


def dumps_observations(obs: ObservationSet) -> str:
    return _encode(obs.to_dict())


def save_observations(obs: ObservationSet, path) -> str:
    """Write ``obs`` as JSON and return the sha256 of the bytes written."""
    text = dumps_observations(obs)
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def load_observations(path) -> ObservationSet:
    return ObservationSet.from_dict(json.loads(Path(path).read_text()))


def generate_data(
    seed: int = 0,
    theta: float = 1.0,
    x_true=DEFAULT_X_TRUE,
    gen_level: int = 10,
    m: int = 50,
    *,
    offset: int = DEFAULT_OFFSET,
    field_: DiffusionField | None = None,
) -> ObservationSet:
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    field_ = field_ or DiffusionField()
    points = observation_points(m)
    clean = forward_map(build_mesh(gen_level, offset), field_, x_true, points)
    noise = np.random.default_rng(seed).standard_normal(m) / math.sqrt(theta)
    return ObservationSet(
        points=points,
        data=clean + noise,
        precision_true=theta,
        gen_level=gen_level,
        gen_seed=seed,
        x_true=tuple(x_true),
        offset=offset,
        field=field_,
    )


def _check_theta(theta: float):
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")


def residual_norm_sq(mesh: MeshLevel, u, obs: ObservationSet) -> float:
    diff = forward_map(mesh, obs.field, u, obs.points) - obs.data
    return float(diff @ diff)


def log_gamma_from_residual(theta: float, m: int, resid_sq: float) -> float:
    return 0.5 * m * math.log(theta) - 0.5 * theta * resid_sq


def qoi_from_residual(theta: float, m: int, resid_sq: float) -> float:
    return 0.5 * m / theta - 0.5 * resid_sq


def log_gamma(theta: float, mesh: MeshLevel, u, obs: ObservationSet) -> float:
    """``(m/2) log(theta) - (theta/2) ||G^l(u) - y||^2``."""
    _check_theta(theta)
    return log_gamma_from_residual(theta, obs.m, residual_norm_sq(mesh, u, obs))


def qoi(theta: float, mesh: MeshLevel, u, obs: ObservationSet) -> float:
    """Score in ``theta`` of ``log_gamma``: ``m / (2 theta) - ||G^l(u) - y||^2 / 2``."""
    _check_theta(theta)
    return qoi_from_residual(theta, obs.m, residual_norm_sq(mesh, u, obs))


class LevelTables(NamedTuple):
    forward: ForwardTables
    data: np.ndarray


@functools.lru_cache(maxsize=128)
def level_tables(obs: ObservationSet, level: int) -> LevelTables:
    mesh = obs.mesh(level)
    return LevelTables(forward_tables(mesh, obs.field, obs.points), np.asarray(obs.data))


@njit(cache=True, nogil=True)
def residual_from_latent(z, tables):
    """``||G^l(u(z)) - y||^2`` with ``z`` in Gaussian coordinates."""
    g = observe(_to_uniform(z), tables.forward)
    acc = 0.0
    for i in range(g.shape[0]):
        d = g[i] - tables.data[i]
        acc += d * d
    return acc
