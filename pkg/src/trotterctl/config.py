"""JSON run configuration for the command-line experiments.

Each section is a dataclass; :meth:`RunConfig.from_dict` rejects unknown keys
(naming the offending key with its dotted path) and :meth:`RunConfig.to_dict`
produces a document that parses back to an equal object.
"""
import dataclasses
import json
from dataclasses import dataclass, field
from typing import List, Optional

from .derivatives import GradientMethod
from .exceptions import ConfigError, InvalidInputError
from .optimize import OptimizerConfig
from .propagate import Scheme

DEFAULT_METHODS = ["ST1", "ST2", "ExSeries(9)", "ExAux", "ExSeries(0)"]


@dataclass
class ProblemConfig:
    kind: str = "lz"
    params: dict = field(default_factory=dict)
    seed: int = 0


@dataclass
class RegularizationConfig:
    alpha: float = 0.0
    gamma: float = 0.0


@dataclass
class InitialControlConfig:
    """Uniform seeding range for optimizer runs."""

    lo: float = -10.0
    hi: float = 10.0


@dataclass
class ControlConfig:
    """Fixed control for gradient checks: constant, uniform(seed) or a sine
    ``amplitude * sin(2 pi t / T)``."""

    kind: str = "constant"
    value: float = 5.0
    lo: float = -1.0
    hi: float = 1.0
    seed: int = 0
    amplitude: float = 2.0


@dataclass
class GradcheckConfig:
    hessian: bool = False
    n_t: Optional[int] = None
    eps: Optional[float] = None
    fd_precision: str = "auto"


@dataclass
class TimingConfig:
    dims: List[int] = field(default_factory=lambda: [2, 4, 8, 16, 32, 64, 128])
    n_t: int = 400
    reps: int = 10
    dt: float = 0.05
    seed: int = 0


@dataclass
class LandscapeConfig:
    dts: List[float] = field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    pairs: List[str] = field(default_factory=lambda: ["ST2-Ex2", "ST1-Ex1"])
    amplitude: float = 2.0


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    scheme: Optional[str] = None
    gradient_method: List[str] = field(default_factory=lambda: list(DEFAULT_METHODS))
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seeds: List[int] = field(default_factory=lambda: [0])
    regularization: RegularizationConfig = field(default_factory=RegularizationConfig)
    output_dir: str = "results"
    initial_control: InitialControlConfig = field(default_factory=InitialControlConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)

    def __post_init__(self):
        if isinstance(self.gradient_method, str):
            self.gradient_method = [self.gradient_method]
        try:
            methods = [GradientMethod.parse(m) for m in self.gradient_method]
            if self.scheme is not None:
                scheme = Scheme.parse(self.scheme)
                for m in methods:
                    if m.scheme is not scheme:
                        raise ConfigError(f"gradient_method {m.label} does not match scheme {scheme}")
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc
        if not methods:
            raise ConfigError("gradient_method must name at least one method")
        self.gradient_method = [m.label for m in methods]
        if not all(isinstance(s, int) and not isinstance(s, bool) for s in self.seeds):
            raise ConfigError("seeds must be integers")

    @property
    def methods(self):
        return [GradientMethod.parse(m) for m in self.gradient_method]

    @classmethod
    def from_dict(cls, data):
        data = dict(_expect_mapping(data, "config"))
        if "seeds" in data:
            data["seeds"] = _parse_seeds(data["seeds"])
        return _build(cls, data, "")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _expect_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    return value


def _parse_seeds(value):
    if isinstance(value, dict):
        unknown = set(value) - {"start", "count"}
        if unknown:
            raise ConfigError(f"unknown key 'seeds.{sorted(unknown)[0]}'")
        start, count = value.get("start", 0), value.get("count", 1)
        if not isinstance(start, int) or not isinstance(count, int) or count < 0:
            raise ConfigError("seeds.start and seeds.count must be integers, count >= 0")
        return list(range(start, start + count))
    if isinstance(value, int) and not isinstance(value, bool):
        return [value]
    if isinstance(value, list):
        return value
    raise ConfigError("seeds must be a list of integers or {start, count}")


def _build(cls, data, path):
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key '{path}{key}'")
    kwargs = {}
    for key, value in data.items():
        sub = names[key].default_factory if names[key].default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[key] = _build(sub, _expect_mapping(value, path + key), f"{path}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path.rstrip('.') or 'config'}: {exc}") from exc


__all__ = ["RunConfig", "ProblemConfig", "RegularizationConfig", "InitialControlConfig",
           "ControlConfig", "GradcheckConfig", "TimingConfig", "LandscapeConfig",
           "DEFAULT_METHODS"]
