"""Experiment configuration: nested dataclasses loaded from YAML with field-path validation."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .coupling import KernelConfig
from .estimators import LevelDistribution
from .fem import MAX_MESH_EXPONENT, DiffusionField
from .sgd import SgdConfig


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ProblemBlock:
    mean: float = 0.15
    scales: list[float] = field(default_factory=lambda: [0.1, 0.025])
    m: int = 50
    offset: int = 3
    gen_level: int = 10
    x_true: list[float] = field(default_factory=lambda: [0.6, -0.4])
    theta_true: float = 1.0
    data_seed: int = 0


@dataclass
class KernelBlock:
    rho: float = KernelConfig.rho
    burn_in: int = KernelConfig.burn_in
    max_iters: int = KernelConfig.max_iters


@dataclass
class LevelsBlock:
    rate: float = LevelDistribution.rate
    beta: float = LevelDistribution.beta
    zeta: float = LevelDistribution.zeta


@dataclass
class RunBlock:
    seed: int = 0
    n: int = 1000
    workers: int = 1
    theta: float = 1.0
    strict: bool = False
    oracle_level: int = 10
    oracle_nodes: int = 64


@dataclass
class SgdBlock:
    theta0: float = SgdConfig.theta0
    alpha1: float = SgdConfig.alpha1
    n_iters: int = SgdConfig.n_iters
    theta_min: float = SgdConfig.theta_min
    samples_per_step: int = SgdConfig.samples_per_step
    parametrization: str = SgdConfig.parametrization


@dataclass
class MseBlock:
    n_values: list[int] = field(default_factory=lambda: [2 ** k for k in range(6, 13)])
    repetitions: int = 20


@dataclass
class ScalingBlock:
    workers: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    n: int = 10_000
    repeats: int = 3


@dataclass
class ExperimentConfig:
    problem: ProblemBlock = field(default_factory=ProblemBlock)
    kernel: KernelBlock = field(default_factory=KernelBlock)
    levels: LevelsBlock = field(default_factory=LevelsBlock)
    run: RunBlock = field(default_factory=RunBlock)
    sgd: SgdBlock = field(default_factory=SgdBlock)
    mse: MseBlock = field(default_factory=MseBlock)
    scaling: ScalingBlock = field(default_factory=ScalingBlock)

    # -- domain objects -----------------------------------------------------------------

    def field_(self) -> DiffusionField:
        return DiffusionField(self.problem.mean, tuple(self.problem.scales))

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(self.kernel.rho, self.kernel.burn_in, self.kernel.max_iters)

    def level_distribution(self) -> LevelDistribution:
        return LevelDistribution(self.levels.rate, self.levels.beta, self.levels.zeta)

    def sgd_config(self) -> SgdConfig:
        s = self.sgd
        return SgdConfig(s.theta0, s.alpha1, s.n_iters, s.theta_min, s.samples_per_step,
                         s.parametrization)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        """Check every cross-field invariant; raise :class:`ConfigError` on the first failure."""
        p, r = self.problem, self.run
        _wrap("problem", self.field_, p)
        if len(p.x_true) != len(p.scales):
            raise ConfigError("problem.x_true", f"needs {len(p.scales)} entries, got {len(p.x_true)}")
        if any(not -1.0 <= v <= 1.0 for v in p.x_true):
            raise ConfigError("problem.x_true", "entries must lie in [-1, 1]")
        _positive("problem.m", p.m)
        _positive("problem.theta_true", p.theta_true)
        if p.data_seed < 0:
            raise ConfigError("problem.data_seed", f"must be >= 0, got {p.data_seed}")
        if p.offset < 1:
            raise ConfigError("problem.offset", f"must be >= 1, got {p.offset}")
        if p.gen_level < 0 or p.gen_level + p.offset > MAX_MESH_EXPONENT:
            raise ConfigError("problem.gen_level",
                              f"need 0 <= level and level + offset <= {MAX_MESH_EXPONENT}")
        if r.oracle_level < 0 or r.oracle_level + p.offset > MAX_MESH_EXPONENT:
            raise ConfigError("run.oracle_level",
                              f"need 0 <= level and level + offset <= {MAX_MESH_EXPONENT}")
        _wrap("kernel", self.kernel_config, self.kernel)
        _wrap("levels", self.level_distribution, self.levels)
        _wrap("sgd", self.sgd_config, self.sgd)
        _positive("run.n", r.n)
        _positive("run.workers", r.workers)
        _positive("run.theta", r.theta)
        _positive("run.oracle_nodes", r.oracle_nodes)
        if r.seed < 0:
            raise ConfigError("run.seed", f"must be >= 0, got {r.seed}")
        if not self.mse.n_values or any(n < 1 for n in self.mse.n_values):
            raise ConfigError("mse.n_values", "must be a non-empty list of positive integers")
        if self.mse.repetitions < 10:
            raise ConfigError("mse.repetitions", f"must be >= 10, got {self.mse.repetitions}")
        if not self.scaling.workers or any(m < 1 for m in self.scaling.workers):
            raise ConfigError("scaling.workers", "must be a non-empty list of positive integers")
        _positive("scaling.n", self.scaling.n)
        _positive("scaling.repeats", self.scaling.repeats)
        return self


def _positive(path, value):
    if not value > 0:
        raise ConfigError(path, f"must be positive, got {value}")


def _wrap(path, build, block):
    """Run a domain constructor and re-raise its ValueError under ``path.<field>``."""
    try:
        build()
    except ValueError as err:
        message = str(err)
        first = message.split(" ", 1)[0]
        names = {f.name for f in dataclasses.fields(block)}
        raise ConfigError(f"{path}.{first}" if first in names else path, message) from None


def _coerce(path: str, value, annotation):
    origin = typing.get_origin(annotation)
    if origin is list:
        (item,) = typing.get_args(annotation)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return [_coerce(f"{path}[{i}]", v, item) for i, v in enumerate(value)]
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported annotation {annotation!r}")


def _build(cls, doc, path: str):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in names:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(where, "unknown field")
    kwargs = {}
    for name in names:
        if name not in doc:
            continue
        where = f"{path}.{name}" if path else name
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, doc[name], where)
        else:
            kwargs[name] = _coerce(where, doc[name], hint)
    return cls(**kwargs)


def config_from_dict(doc: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, doc, "").validate()


def load_config(path=None) -> ExperimentConfig:
    """Defaults when ``path`` is None, otherwise the YAML document at ``path`` over the defaults."""
    if path is None:
        return ExperimentConfig().validate()
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as err:
        raise ConfigError("<file>", f"cannot parse {path}: {err}") from None
    return config_from_dict(doc)
