import logging
import os
from typing import Any, Optional

import attrs
import tomli

from src.calibration.events import CalibrationConfig, at_least, positive
from src.calibration.stability import DEFAULT_SWEEP
from src.errors import DataException, ScenarioException, ValidationException
from src.simulator import SimulationConfig

log = logging.getLogger(__name__)

STATIC_SUFFIX = "_stat"
ADAPTIVE_SUFFIX = "_adap"


def _worker_count(instance, attribute, value):
    # joblib convention: -1 uses every core
    if value == 0 or value < -1:
        raise ValidationException(f"threads must be positive or -1, got {value}")


@attrs.frozen
class SuperpositionSettings:
    n_samples: int = attrs.field(default=1000, converter=int, validator=at_least(1))
    pool_size: int = attrs.field(default=100, converter=int, validator=at_least(2))
    pair: Optional[str] = None
    adaptive: bool = True


@attrs.frozen
class ValidationSettings:
    benchmark_first_year: int = attrs.field(default=2011, converter=int)
    benchmark_last_year: int = attrs.field(default=2020, converter=int)
    train_last_year: int = attrs.field(default=2010, converter=int)
    sweep: tuple[float, ...] = attrs.field(default=DEFAULT_SWEEP, converter=lambda values: tuple(map(float, values)))

    def __attrs_post_init__(self):
        if self.train_last_year >= self.benchmark_first_year:
            raise ValidationException("training years must end before the benchmark years start")
        if self.benchmark_last_year <= self.benchmark_first_year:
            raise ValidationException("benchmark range must span at least two years")
        for value in self.sweep:
            positive(self, attrs.fields(ValidationSettings).sweep, value)


@attrs.frozen
class ScenarioSettings:
    shocks: tuple[dict, ...] = attrs.field(converter=tuple)
    adaptive: bool = True
    substitution: bool = True

    def __attrs_post_init__(self):
        if not self.shocks:
            raise ValidationException("a scenario needs at least one shock")


@attrs.frozen
class RunConfig:
    """
    Everything a command needs to reproduce its outputs. Built from a TOML file and command-line overrides.
    """
    data_dir: str = "data"
    output_dir: str = "out"
    seed: Optional[int] = None
    threads: int = attrs.field(default=1, converter=int, validator=_worker_count)
    first_year: Optional[int] = None
    last_year: Optional[int] = None
    simulation_year: Optional[int] = None
    calibration: CalibrationConfig = attrs.field(factory=CalibrationConfig)
    simulation: SimulationConfig = attrs.field(factory=SimulationConfig)
    superposition: SuperpositionSettings = attrs.field(factory=SuperpositionSettings)
    validation: ValidationSettings = attrs.field(factory=ValidationSettings)
    scenarios: dict[str, ScenarioSettings] = attrs.field(factory=dict)

    def evolve(self, **changes) -> "RunConfig":
        changes = {key: value for key, value in changes.items() if value is not None}
        return attrs.evolve(self, **changes)

    @property
    def catalog_dir(self) -> str:
        return os.path.join(self.data_dir, "catalog")

    @property
    def years_dir(self) -> str:
        return os.path.join(self.data_dir, "years")

    def calibration_config(self) -> CalibrationConfig:
        """
        Calibration settings with the run seed filled in when none is configured.
        """
        if self.calibration.rng_seed is None and self.seed is not None:
            return self.calibration.evolve(rng_seed=self.seed)
        return self.calibration

    def scenario(self, name: str) -> ScenarioSettings:
        if name not in self.scenarios:
            known = ", ".join(sorted(self.scenarios)) or "none"
            raise ScenarioException(f"unknown scenario {name!r}, configured: {known}", name)
        return self.scenarios[name]

    def as_dict(self) -> dict[str, Any]:
        return attrs.asdict(self)


def _section(cls, content: Any, name: str):
    if not isinstance(content, dict):
        raise ValidationException(f"[{name}] must be a table")
    known = {field.name for field in attrs.fields(cls)}
    unknown = sorted(set(content) - known)
    if unknown:
        raise ValidationException(f"unknown keys in [{name}]: {', '.join(unknown)}")
    try:
        return cls(**content)
    except (TypeError, ValueError) as exception:
        raise ValidationException(f"invalid [{name}] section: {exception}") from exception


def parse_config(content: dict[str, Any]) -> RunConfig:
    content = dict(content)
    sections = {
        "calibration": CalibrationConfig,
        "simulation": SimulationConfig,
        "superposition": SuperpositionSettings,
        "validation": ValidationSettings,
    }
    values = {}
    for name, cls in sections.items():
        if name in content:
            values[name] = _section(cls, content.pop(name), name)
    if "scenarios" in content:
        scenarios = content.pop("scenarios")
        if not isinstance(scenarios, dict):
            raise ValidationException("[scenarios] must be a table of named scenarios")
        values["scenarios"] = {
            name: _section(ScenarioSettings, settings, f"scenarios.{name}") for name, settings in scenarios.items()
        }
    values.update(content)
    return _section(RunConfig, values, "run")


def load_config(path: Optional[str] = None, **overrides) -> RunConfig:
    """
    Reads a TOML run file and applies command-line overrides; None overrides are ignored.
    :param path: TOML file, built-in defaults when None
    :param overrides: top-level RunConfig fields
    :return:
    """
    content = {}
    if path is not None:
        if not os.path.isfile(path):
            raise DataException(f"config file {path} does not exist", path=path)
        with open(path, "rb") as file:
            try:
                content = tomli.load(file)
            except tomli.TOMLDecodeError as exception:
                raise ValidationException(f"config file is not valid TOML: {exception}", path=path) from exception
        log.debug(f"Loaded run configuration from {path}")
    config = parse_config(content)
    return config.evolve(**overrides)
