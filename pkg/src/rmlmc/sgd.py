"""Stochastic gradient ascent on ``log I_theta + log p(theta)`` for the noise precision."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .coupling import KernelConfig
from .estimators import LevelDistribution, posterior_samples, quadrature_reference, TruncationError
from .model import ObservationSet

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
PARAMETRIZATIONS = ("log", "theta")


@dataclass(frozen=True)
class SgdConfig:
    """``parametrization="log"`` takes the step in ``log theta`` (gradient times ``theta``);
    ``"theta"`` steps in ``theta`` itself."""

    theta0: float = 0.1
    alpha1: float = 0.1
    n_iters: int = 1000
    theta_min: float = 1e-3
    samples_per_step: int = 32
    parametrization: str = "log"

    def __post_init__(self):
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"parametrization must be one of {PARAMETRIZATIONS}, "
                             f"got {self.parametrization!r}")
        if not self.theta_min > 0:
            raise ValueError(f"theta_min must be positive, got {self.theta_min}")
        if not self.theta0 > self.theta_min:
            raise ValueError(f"theta0 ({self.theta0}) must exceed theta_min ({self.theta_min})")
        if not self.alpha1 > 0:
            raise ValueError(f"alpha1 must be positive, got {self.alpha1}")
        if self.n_iters < 0 or self.samples_per_step < 1:
            raise ValueError("n_iters must be >= 0 and samples_per_step >= 1")


@dataclass
class SgdTrajectory:
    thetas: list[float]
    grad_estimates: list[float] = field(default_factory=list)
    costs: list[int] = field(default_factory=list)
    truncations: int = 0

    @property
    def final(self) -> float:
        return self.thetas[-1]


def log_prior(theta: float) -> float:
    """Standard normal on ``log theta``, as a density in ``theta``."""
    lt = math.log(theta)
    return -0.5 * lt * lt - _HALF_LOG_2PI - lt


def prior_log_grad(theta: float) -> float:
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    return -(math.log(theta) + 1.0) / theta


def sgd_step(theta: float, n: int, cfg: SgdConfig, grad: float) -> float:
    """One Robbins-Monro ascent step with rate ``alpha1 / n``, floored at ``theta_min``.

    ``grad`` estimates ``d/dtheta log I_theta``; the prior score is added here.
    In log mode ``log theta`` moves by ``(alpha1 / n) theta (grad + d/dtheta log p)``,
    which is the same direction but keeps the step size commensurate with ``theta``.
    """
    if n < 1:
        raise ValueError(f"step index starts at 1, got {n}")
    total = grad + prior_log_grad(theta)
    rate = cfg.alpha1 / n
    if cfg.parametrization == "theta":
        return max(cfg.theta_min, theta + rate * total)
    psi = math.log(theta) + rate * theta * total
    # exp overflow is just "very large"; the floor handles the other side
    return max(cfg.theta_min, math.exp(min(psi, 700.0)))


def run_sgd(cfg: SgdConfig, dist: LevelDistribution, kcfg: KernelConfig, obs: ObservationSet,
            seed: int = 0, workers: int = 1, strict: bool = False) -> SgdTrajectory:
    """Robbins-Monro ascent driven by averaged single-term estimates of ``d/dtheta log I``.

    Step ``n`` consumes streams ``(n - 1) * b .. n * b - 1`` of ``seed``, so the
    trajectory is a pure function of ``(cfg, seed)``.
    """
    b = cfg.samples_per_step
    traj = SgdTrajectory([cfg.theta0])
    theta = cfg.theta0
    for n in range(1, cfg.n_iters + 1):
        samples = posterior_samples(theta, b, dist, kcfg, obs, seed=seed, workers=workers,
                                    first_index=(n - 1) * b)
        trunc = sum(s.truncated for s in samples)
        if strict and trunc:
            raise TruncationError(f"step {n}: {trunc} increments hit max_iters")
        grad = float(np.mean([s.value for s in samples]))
        theta = sgd_step(theta, n, cfg, grad)
        traj.thetas.append(theta)
        traj.grad_estimates.append(grad)
        traj.costs.append(int(sum(s.pde_solves for s in samples)))
        traj.truncations += trunc
    return traj


def oracle_gradient(theta: float, obs: ObservationSet, level: int, nodes_per_dim: int = 64) -> float:
    """Quadrature value of ``d/dtheta [log I_theta + log p(theta)]`` at one level."""
    post = quadrature_reference(theta, level, obs, nodes_per_dim).posterior_mean
    return post + prior_log_grad(theta)


def oracle_objective(theta: float, obs: ObservationSet, level: int, nodes_per_dim: int = 64) -> float:
    return quadrature_reference(theta, level, obs, nodes_per_dim).log_evidence + log_prior(theta)


def map_oracle(obs: ObservationSet, level: int = 10, nodes_per_dim: int = 64,
               grid=None) -> float:
    """``argmax_theta p(theta) I_theta^l`` by a grid search then a root solve on the gradient."""
    grid = np.geomspace(1e-2, 1e2, 41) if grid is None else np.asarray(grid)
    values = [oracle_objective(t, obs, level, nodes_per_dim) for t in grid]
    best = int(np.argmax(values))
    if best in (0, len(grid) - 1):
        raise RuntimeError(f"MAP not bracketed by the grid [{grid[0]}, {grid[-1]}]")
    return brentq(oracle_gradient, grid[best - 1], grid[best + 1],
                  args=(obs, level, nodes_per_dim), xtol=1e-12, rtol=1e-12)
