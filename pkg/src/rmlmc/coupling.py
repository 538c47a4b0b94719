"""Coupled pCN chains and the unbiased estimator of a level increment.

Four chains are run together for level ``l``::

    row 0: U_{n,l}      row 2: U'_{n,l}
    row 1: U_{n,l-1}    row 3: U'_{n,l-1}

The unprimed pair is one step ahead of the primed pair (lag 1). Within each
step the unprimed coarse proposal is maximally coupled to the unprimed fine
one, each primed proposal is maximally coupled to its unprimed partner, and
one acceptance uniform is shared by all four. All
chains live in Gaussian coordinates ``z`` and see the likelihood through
``u = 2 Phi(z) - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import ObservationSet, level_tables, residual_from_latent

NOT_MET = -1


@dataclass(frozen=True)
class KernelConfig:
    rho: float = 0.9
    burn_in: int = 500
    max_iters: int = 100_000

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.max_iters <= self.burn_in:
            raise ValueError(
                f"max_iters ({self.max_iters}) must exceed burn_in ({self.burn_in})"
            )

    @property
    def scale(self) -> float:
        return math.sqrt(1.0 - self.rho * self.rho)

    @staticmethod
    def level_pair(level: int) -> tuple[int, int]:
        return level, level - 1


def pcn_propose(z, rho: float, noise) -> np.ndarray:
    return rho * np.asarray(z) + math.sqrt(1.0 - rho * rho) * np.asarray(noise)


def pcn_accept_log_ratio(loglik_new: float, loglik_old: float) -> float:
    # pCN is prior-reversible, so only the likelihood enters
    if loglik_new == -math.inf:
        return -math.inf
    return min(0.0, loglik_new - loglik_old)


@njit(cache=True, nogil=True)
def _reflect(mean_a, mean_b, scale, xi, log_u):
    """Reflection-maximal coupling of N(mean_a, s^2 I) and N(mean_b, s^2 I) given base noise.

    Returns ``(p, q, coalesced, noise_b)`` with ``p = mean_a + s xi`` and
    ``q = mean_b + s noise_b`` (``q`` is an exact copy of ``p`` when coalesced).
    """
    J = xi.shape[0]
    p = mean_a + scale * xi
    gap = (mean_a - mean_b) / scale
    dist2 = 0.0
    cross = 0.0
    for j in range(J):
        dist2 += gap[j] * gap[j]
        cross += xi[j] * gap[j]
    if dist2 == 0.0:
        return p, p.copy(), True, xi.copy()
    # log N(xi + gap) - log N(xi)
    if log_u < -cross - 0.5 * dist2:
        return p, p.copy(), True, xi + gap
    noise_b = xi - (2.0 * cross / dist2) * gap
    return p, mean_b + scale * noise_b, False, noise_b


def reflection_maximal_coupling(mean_a, mean_b, scale: float, rng: np.random.Generator):
    """Draw ``(p, q, coalesced)`` with ``p ~ N(mean_a, s^2 I)`` and ``q ~ N(mean_b, s^2 I)``.

    ``p == q`` exactly with the largest probability any coupling allows,
    ``2 Phi(-|mean_a - mean_b| / (2 s))``; otherwise ``q`` is ``p`` reflected
    through the hyperplane bisecting the two means.
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    mean_a = np.ascontiguousarray(mean_a, dtype=float)
    mean_b = np.ascontiguousarray(mean_b, dtype=float)
    xi = rng.standard_normal(mean_a.shape[0])
    log_u = math.log(rng.random())
    p, q, coalesced, _ = _reflect(mean_a, mean_b, float(scale), xi, log_u)
    return p, q, coalesced


@njit(cache=True, nogil=True)
def _step(states, resid, met, n, n_levels, coupled, rho, theta, fine, coarse, rng):
    """Advance the foursome from step ``n`` to ``n + 1`` in place; return PDE solves used.

    With ``coupled=False`` only the unprimed rows move (the lag-1 warm-up).
    """
    J = states.shape[1]
    scale = math.sqrt(1.0 - rho * rho)
    xi = np.empty(J)
    for j in range(J):
        xi[j] = rng.standard_normal()
    log_acc = math.log(rng.random())
    log_cross = math.log(rng.random())
    log_within = math.log(rng.random())

    # unprimed proposals: coarse is maximally coupled to fine around the same noise
    props = np.empty((4, J))
    r_new = np.empty(4)
    noise = np.empty((2, J))
    noise[0] = xi
    p, q, _, noise_c = _reflect(rho * states[0], rho * states[1], scale, xi, log_cross)
    props[0] = p
    if n_levels == 2:
        props[1] = q
        noise[1] = noise_c
    solves = 0
    for k in range(n_levels):
        tables = fine if k == 0 else coarse
        r_new[k] = residual_from_latent(props[k], tables)
        solves += 1
        if coupled and met[k] == NOT_MET:
            # primed chain of this level, maximally coupled to its unprimed partner
            _, q, coalesced, _ = _reflect(rho * states[k], rho * states[2 + k], scale,
                                          noise[k], log_within)
            props[2 + k] = q
            if coalesced:
                r_new[2 + k] = r_new[k]
            else:
                r_new[2 + k] = residual_from_latent(q, tables)
                solves += 1
            if log_acc < min(0.0, -0.5 * theta * (r_new[2 + k] - resid[2 + k])):
                states[2 + k] = props[2 + k]
                resid[2 + k] = r_new[2 + k]
        if log_acc < min(0.0, -0.5 * theta * (r_new[k] - resid[k])):
            states[k] = props[k]
            resid[k] = r_new[k]
        if coupled and met[k] != NOT_MET:
            states[2 + k] = states[k]
            resid[2 + k] = resid[k]
    if coupled:
        for k in range(n_levels):
            if met[k] == NOT_MET:
                same = True
                for j in range(J):
                    if states[k, j] != states[2 + k, j]:
                        same = False
                        break
                if same:
                    met[k] = n + 1
    return solves


@njit(cache=True, nogil=True)
def _init_states(n_levels, J, fine, coarse, rng):
    """Prior draws; fine and coarse start from the same point within each pair."""
    states = np.zeros((4, J))
    resid = np.zeros(4)
    z = np.empty(J)
    zp = np.empty(J)
    for j in range(J):
        z[j] = rng.standard_normal()
    for j in range(J):
        zp[j] = rng.standard_normal()
    for k in range(2):
        states[k] = z
        states[2 + k] = zp
    for k in range(n_levels):
        tables = fine if k == 0 else coarse
        resid[k] = residual_from_latent(z, tables)
        resid[2 + k] = residual_from_latent(zp, tables)
    return states, resid, 2 * n_levels


@njit(cache=True, nogil=True)
def _qoi(theta, m, r):
    return 0.5 * m / theta - 0.5 * r


@njit(cache=True, nogil=True)
def _increment(n_levels, J, m, rho, theta, burn_in, max_iters, fine, coarse, rng):
    states, resid, solves = _init_states(n_levels, J, fine, coarse, rng)
    met = np.full(2, NOT_MET)
    base = np.zeros(2)
    corr = np.zeros(2)
    if burn_in == 0:
        for k in range(n_levels):
            base[k] = _qoi(theta, m, resid[k])
    solves += _step(states, resid, met, 0, n_levels, False, rho, theta, fine, coarse, rng)
    n = 1
    truncated = False
    while True:
        if n == burn_in:
            for k in range(n_levels):
                base[k] = _qoi(theta, m, resid[k])
        elif n > burn_in:
            for k in range(n_levels):
                corr[k] += _qoi(theta, m, resid[k]) - _qoi(theta, m, resid[2 + k])
        done = n >= burn_in
        for k in range(n_levels):
            if met[k] == NOT_MET:
                done = False
        if done:
            break
        if n >= max_iters:
            truncated = True
            break
        solves += _step(states, resid, met, n, n_levels, True, rho, theta, fine, coarse, rng)
        n += 1
    value = base[0] + corr[0]
    if n_levels == 2:
        value -= base[1] + corr[1]
    return value, met[0], met[1], n, solves, truncated


@dataclass
class CoupledFoursome:
    """Mutable four-chain state; ``residuals`` caches ``||G(u) - y||^2`` per row."""

    level: int
    states: np.ndarray
    residuals: np.ndarray
    step: int = 0
    met: np.ndarray = field(default_factory=lambda: np.full(2, NOT_MET))
    pde_solves: int = 0

    @property
    def n_levels(self) -> int:
        return 1 if self.level == 0 else 2

    @property
    def z_fine(self) -> np.ndarray:
        return self.states[0]

    @property
    def z_coarse(self) -> np.ndarray:
        return self.states[1]

    @property
    def zp_fine(self) -> np.ndarray:
        return self.states[2]

    @property
    def zp_coarse(self) -> np.ndarray:
        return self.states[3]

    @property
    def met_fine(self) -> int | None:
        return None if self.met[0] == NOT_MET else int(self.met[0])

    @property
    def met_coarse(self) -> int | None:
        if self.level == 0:
            return None
        return None if self.met[1] == NOT_MET else int(self.met[1])

    def log_likelihoods(self, theta: float, m: int) -> np.ndarray:
        return 0.5 * m * math.log(theta) - 0.5 * theta * self.residuals


def _tables_for(level: int, obs: ObservationSet):
    fine = level_tables(obs, level)
    coarse = level_tables(obs, level - 1) if level > 0 else fine
    return fine, coarse


def init_foursome(level: int, obs: ObservationSet, rng: np.random.Generator,
                  rho: float = 0.9, theta: float = 1.0) -> CoupledFoursome:
    """Prior initialisation followed by the uncoupled warm-up step of the unprimed pair."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    fine, coarse = _tables_for(level, obs)
    n_levels = 1 if level == 0 else 2
    states, resid, solves = _init_states(n_levels, obs.field.dimension, fine, coarse, rng)
    met = np.full(2, NOT_MET)
    solves += _step(states, resid, met, 0, n_levels, False, rho, theta, fine, coarse, rng)
    return CoupledFoursome(level, states, resid, step=1, met=met, pde_solves=solves)


def foursome_step(state: CoupledFoursome, config: KernelConfig, theta: float,
                  obs: ObservationSet, rng: np.random.Generator) -> CoupledFoursome:
    """One coupled Metropolis step of all four chains (updates ``state`` in place)."""
    fine, coarse = _tables_for(state.level, obs)
    state.pde_solves += _step(state.states, state.residuals, state.met, state.step,
                              state.n_levels, True, config.rho, theta, fine, coarse, rng)
    state.step += 1
    return state


@dataclass(frozen=True)
class IncrementEstimate:
    value: float
    level: int
    tau_fine: int | None
    tau_coarse: int | None
    iterations: int
    pde_solves: int
    truncated: bool


def unbiased_increment(level: int, config: KernelConfig, theta: float,
                       obs: ObservationSet, rng: np.random.Generator) -> IncrementEstimate:
    """Unbiased estimate of ``E_l[phi] - E_{l-1}[phi]`` (just ``E_0[phi]`` at level 0)."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    fine, coarse = _tables_for(level, obs)
    n_levels = 1 if level == 0 else 2
    value, tau_f, tau_c, n, solves, truncated = _increment(
        n_levels, obs.field.dimension, obs.m, config.rho, float(theta),
        config.burn_in, config.max_iters, fine, coarse, rng)
    return IncrementEstimate(
        value=float(value),
        level=level,
        tau_fine=None if tau_f == NOT_MET else int(tau_f),
        tau_coarse=None if (level == 0 or tau_c == NOT_MET) else int(tau_c),
        iterations=int(n),
        pde_solves=int(solves),
        truncated=bool(truncated),
    )
