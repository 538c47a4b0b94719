"""Single-term randomized estimators, their deterministic MLMC baseline, and a quadrature oracle."""

from __future__ import annotations

import functools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .coupling import KernelConfig, unbiased_increment
from .fem import DEFAULT_OFFSET, DiffusionField, MeshLevel, build_mesh, forward_tables, observe
from .model import ObservationSet, observation_points
from .parallel import derive_stream, parallel_map

_LOG2 = math.log(2.0)


class TruncationError(RuntimeError):
    """Raised in strict mode when a coupled chain pair failed to meet within ``max_iters``."""


def level_pmf(rate: float, l: int) -> float:
    """Geometric weight ``(1 - 2^-rate) 2^(-rate l)``."""
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if l < 0:
        return 0.0
    return -math.expm1(-rate * _LOG2) * math.exp(-rate * l * _LOG2)


@dataclass(frozen=True)
class LevelDistribution:
    """Geometric level distribution.

    ``beta`` and ``zeta`` are the assumed variance-decay and cost-growth rates
    of the increments in powers of ``h_l``; a valid rate sits strictly between
    them so the single-term estimator has finite variance and finite expected
    cost.
    """

    rate: float = 1.5
    beta: float = 2.0
    zeta: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not self.zeta < self.rate < self.beta:
            raise ValueError(
                f"need zeta < rate < beta, got zeta={self.zeta}, rate={self.rate}, beta={self.beta}"
            )

    def pmf(self, l: int) -> float:
        return level_pmf(self.rate, l)

    def cdf(self, l: int) -> float:
        if l < 0:
            return 0.0
        return -math.expm1(-self.rate * (l + 1) * _LOG2)

    def sample(self, uniform: float) -> int:
        return sample_level(self, uniform)


def sample_level(dist: LevelDistribution, uniform: float) -> int:
    """Inverse-CDF draw: the smallest ``l`` with ``cdf(l) > uniform``."""
    if not 0.0 <= uniform < 1.0:
        raise ValueError(f"uniform must lie in [0, 1), got {uniform}")
    level = max(int(math.floor(math.log1p(-uniform) / (-dist.rate * _LOG2))), 0)
    # the closed form can land one off at CDF boundaries
    while dist.cdf(level) <= uniform:
        level += 1
    while level > 0 and dist.cdf(level - 1) > uniform:
        level -= 1
    return level


@dataclass(frozen=True)
class SingleTermSample:
    value: float
    level: int
    increment: float
    pde_solves: int
    kernel_steps: int
    truncated: bool
    tau_fine: int | None = None
    tau_coarse: int | None = None


@dataclass
class EstimateSummary:
    mean: float
    std_error: float
    n: int
    per_level_counts: dict[int, int]
    total_cost: dict[str, int]
    truncation_count: int
    samples: list = field(default_factory=list, repr=False)

    @classmethod
    def from_samples(cls, samples: Sequence[SingleTermSample]) -> "EstimateSummary":
        values = np.array([s.value for s in samples])
        n = len(values)
        std_error = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        counts = Counter(s.level for s in samples)
        return cls(
            mean=float(values.mean()),
            std_error=std_error,
            n=n,
            per_level_counts=dict(sorted(counts.items())),
            total_cost={
                "pde_solves": int(sum(s.pde_solves for s in samples)),
                "kernel_steps": int(sum(s.kernel_steps for s in samples)),
            },
            truncation_count=int(sum(s.truncated for s in samples)),
            samples=list(samples),
        )


def single_term_posterior(theta: float, dist: LevelDistribution, kcfg: KernelConfig,
                          obs: ObservationSet, rng: np.random.Generator,
                          level: int | None = None) -> SingleTermSample:
    """One draw of ``Z = Y_L / p_L`` with ``L ~ dist`` (or ``L = level`` if given)."""
    uniform = rng.random()
    if level is None:
        level = sample_level(dist, uniform)
    inc = unbiased_increment(level, kcfg, theta, obs, rng)
    return SingleTermSample(
        value=inc.value / dist.pmf(level),
        level=level,
        increment=inc.value,
        pde_solves=inc.pde_solves,
        kernel_steps=inc.iterations,
        truncated=inc.truncated,
        tau_fine=inc.tau_fine,
        tau_coarse=inc.tau_coarse,
    )


def posterior_samples(theta: float, n: int, dist: LevelDistribution, kcfg: KernelConfig,
                      obs: ObservationSet, seed: int = 0, workers: int = 1,
                      first_index: int = 0) -> list[SingleTermSample]:
    """Samples ``first_index .. first_index + n - 1``, each from its own derived stream."""

    def task(i):
        return single_term_posterior(theta, dist, kcfg, obs, derive_stream(seed, first_index + i))

    return parallel_map(n, workers, task)


def rmlmc_estimate(theta: float, n: int, dist: LevelDistribution, kcfg: KernelConfig,
                   obs: ObservationSet, seed: int = 0, workers: int = 1,
                   strict: bool = False) -> EstimateSummary:
    """Average of ``n`` i.i.d. single-term samples; identical for any ``workers``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    summary = EstimateSummary.from_samples(
        posterior_samples(theta, n, dist, kcfg, obs, seed=seed, workers=workers))
    if strict and summary.truncation_count:
        raise TruncationError(
            f"{summary.truncation_count} of {n} increments hit max_iters={kcfg.max_iters}")
    return summary


# -- forward (prior) hierarchy ----------------------------------------------------------

@dataclass(frozen=True)
class ForwardHierarchy:
    """``u -> G^l(u)`` for every level, with the uniform prior on ``[-1, 1]^J``."""

    field: DiffusionField = field(default_factory=DiffusionField)
    points: tuple[float, ...] = tuple(observation_points(50))
    offset: int = DEFAULT_OFFSET

    @property
    def dimension(self) -> int:
        return self.field.dimension

    def observe(self, level: int, u) -> np.ndarray:
        return observe(np.ascontiguousarray(u, dtype=float), _tables(self, level))

    def sample_prior(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, self.dimension)


@functools.lru_cache(maxsize=64)
def _tables(hierarchy: ForwardHierarchy, level: int):
    mesh = build_mesh(level, hierarchy.offset)
    return forward_tables(mesh, hierarchy.field, np.asarray(hierarchy.points))


Selector = Callable[[np.ndarray], float]


def coupled_forward_increment(selector: Selector, level: int, u,
                              hierarchy: ForwardHierarchy, coarse_level: int | None = None) -> float:
    """``phi(G^l(u)) - phi(G^{l-1}(u))`` with the same ``u`` on both levels."""
    coarse_level = level - 1 if coarse_level is None else coarse_level
    fine = selector(hierarchy.observe(level, u))
    if coarse_level < 0:
        return float(fine)
    return float(fine - selector(hierarchy.observe(coarse_level, u)))


def mlmc_estimate(selector: Selector, samples_per_level: Sequence[int],
                  rng: np.random.Generator, hierarchy: ForwardHierarchy | None = None) -> float:
    """Deterministic-level MLMC: ``sum_l mean_i [phi(G^l(u_i)) - phi(G^{l-1}(u_i))]``."""
    hierarchy = hierarchy or ForwardHierarchy()
    if not samples_per_level or any(n < 1 for n in samples_per_level):
        raise ValueError("samples_per_level must be non-empty with entries >= 1")
    total = 0.0
    for level, n_l in enumerate(samples_per_level):
        acc = 0.0
        for _ in range(n_l):
            acc += coupled_forward_increment(selector, level, hierarchy.sample_prior(rng), hierarchy)
        total += acc / n_l
    return total


def forward_single_term(selector: Selector, dist: LevelDistribution,
                        rng: np.random.Generator, hierarchy: ForwardHierarchy | None = None,
                        level: int | None = None) -> float:
    """Unbiased estimate of the infinite-resolution prior mean of ``selector(G(u))``."""
    hierarchy = hierarchy or ForwardHierarchy()
    uniform = rng.random()
    if level is None:
        level = sample_level(dist, uniform)
    u = hierarchy.sample_prior(rng)
    return coupled_forward_increment(selector, level, u, hierarchy) / dist.pmf(level)


# -- double randomization ---------------------------------------------------------------

InnerFamily = Callable[[int, int, "int | None", np.random.Generator], tuple[float, float]]


def geometric_schedule(k: int) -> int:
    return 2 ** k


def double_randomized_single_term(inner: InnerFamily, outer: LevelDistribution,
                                  inner_dist: LevelDistribution, rng: np.random.Generator,
                                  schedule: Callable[[int], int] = geometric_schedule,
                                  indices: tuple[int, int] | None = None) -> float:
    """``(Y_L^{N_K} - Y_L^{N_{K-1}}) / (p_L sp_K)`` with ``L ~ outer`` and ``K ~ inner_dist``.

    ``inner(l, n_fine, n_coarse, rng)`` must return the coupled pair
    ``(Y_l^{n_fine}, Y_l^{n_coarse})``; ``n_coarse`` is ``None`` for ``K = 0``
    and the second entry is then ignored. ``indices`` forces ``(L, K)``.
    """
    if indices is None:
        level = sample_level(outer, rng.random())
        k = sample_level(inner_dist, rng.random())
    else:
        level, k = indices
    n_fine = schedule(k)
    n_coarse = schedule(k - 1) if k > 0 else None
    if n_coarse is not None and not n_fine > n_coarse:
        raise ValueError(f"schedule must be strictly increasing, got N_{k - 1}={n_coarse}, N_{k}={n_fine}")
    y_fine, y_coarse = inner(level, n_fine, n_coarse, rng)
    if n_coarse is None:
        y_coarse = 0.0
    return (y_fine - y_coarse) / (outer.pmf(level) * inner_dist.pmf(k))


# -- quadrature oracle ------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureResult:
    posterior_mean: float
    log_evidence: float


@functools.lru_cache(maxsize=32)
def _gauss_legendre(nodes_per_dim: int, dim: int):
    x, w = np.polynomial.legendre.leggauss(nodes_per_dim)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    weights = functools.reduce(np.multiply.outer, [w] * dim).ravel()
    return points, weights


@functools.lru_cache(maxsize=64)
def _residual_grid(obs: ObservationSet, level: int, nodes_per_dim: int) -> np.ndarray:
    points, _ = _gauss_legendre(nodes_per_dim, obs.field.dimension)
    tables = forward_tables(obs.mesh(level), obs.field, obs.points)
    data = np.asarray(obs.data)
    out = np.empty(len(points))
    for i, u in enumerate(points):
        diff = observe(np.ascontiguousarray(u), tables) - data
        out[i] = diff @ diff
    return out


def quadrature_reference(theta: float, mesh: MeshLevel | int, obs: ObservationSet,
                         nodes_per_dim: int = 64) -> QuadratureResult:
    """Tensor Gauss-Legendre values of ``E_theta^l[phi_theta]`` and ``log I_theta^l``.

    The evidence includes the uniform prior density ``2^-J``.
    """
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    dim = obs.field.dimension
    if dim > 3:
        raise ValueError(f"tensor quadrature supports J <= 3, got {dim}")
    level = mesh.level if isinstance(mesh, MeshLevel) else int(mesh)
    resid = _residual_grid(obs, level, nodes_per_dim)
    _, weights = _gauss_legendre(nodes_per_dim, dim)
    log_gamma = 0.5 * obs.m * math.log(theta) - 0.5 * theta * resid
    log_w = np.log(weights) + log_gamma
    log_evidence = float(logsumexp(log_w)) - dim * _LOG2
    post = np.exp(log_w - logsumexp(log_w))
    phi = 0.5 * obs.m / theta - 0.5 * resid
    return QuadratureResult(float(post @ phi), log_evidence)


def quadrature_increment(theta: float, level: int, obs: ObservationSet,
                         nodes_per_dim: int = 64) -> float:
    """``E^l[phi] - E^{l-1}[phi]`` (``E^{-1} = 0``)."""
    fine = quadrature_reference(theta, level, obs, nodes_per_dim).posterior_mean
    if level == 0:
        return fine
    return fine - quadrature_reference(theta, level - 1, obs, nodes_per_dim).posterior_mean


def prior_expectation(selector: Selector, level: int, hierarchy: ForwardHierarchy | None = None,
                      nodes_per_dim: int = 32) -> float:
    """Gauss-Legendre prior mean of ``selector(G^l(u))`` under the uniform prior."""
    hierarchy = hierarchy or ForwardHierarchy()
    points, weights = _gauss_legendre(nodes_per_dim, hierarchy.dimension)
    values = np.array([selector(hierarchy.observe(level, u)) for u in points])
    return float(weights @ values) / 2.0 ** hierarchy.dimension
