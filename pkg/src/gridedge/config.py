import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator
from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

from gridedge.feeder.builder import PRIMARY_VOLTAGE, radial_feeder, stock_feeder
from gridedge.feeder.loader import load_feeder, validation_message
from gridedge.feeder.models import FeederDescription
from gridedge.recover.models import SolverMode, SolverOptions
from gridedge.shared.constants import EXPERIMENT_FORMAT
from gridedge.shared.exceptions import ConfigError
from gridedge.synth.models import ScenarioConfig


logger = logging.getLogger(__name__)


class BuiltinFeeder(BaseModel):
    """Feeder generated in code instead of read from a file."""

    model_config = ConfigDict(extra="forbid")

    generator: Literal["stock", "radial"]
    lossless: bool = False
    voltage: float = Field(default=PRIMARY_VOLTAGE, gt=0, description="line-to-neutral volts")
    n_houses: Optional[int] = Field(default=None, ge=1)
    n_laterals: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_radial(self):
        if self.generator == "radial" and self.n_houses is None:
            raise ValueError("the radial generator needs n_houses")
        return self

    def build(self) -> FeederDescription:
        if self.generator == "stock":
            return stock_feeder(lossless=self.lossless, voltage=self.voltage)
        return radial_feeder(
            self.n_houses, self.n_laterals, lossless=self.lossless, voltage=self.voltage
        )


class RecoveryConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: SolverMode = "rank1"
    lam: Union[Literal["auto"], float] = "auto"
    options: SolverOptions = Field(default_factory=SolverOptions)
    nonnegative_q: bool = False
    q_low_rank: bool = Field(
        default=False, description="add the PV reactive ratio times K to the Q block"
    )

    @model_validator(mode="after")
    def _check_lam(self):
        if self.lam != "auto" and not self.lam > 0:
            raise ValueError(f"lam must be 'auto' or positive, got {self.lam}")
        return self


class AppsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fractions: Optional[List[float]] = Field(
        default=None, description="detection thresholds as fractions of the EV rating"
    )
    tolerance: int = Field(default=1, ge=0, description="match tolerance, minutes")
    min_gap: int = Field(default=0, ge=0)
    max_fpr: float = Field(default=0.1, ge=0, le=1)
    period_range: Tuple[float, float] = (10.0, 35.0)
    bandpass: bool = False
    night_hours: Tuple[float, float] = Field(
        default=(18.0, 6.0), description="(dusk, dawn) clock hours bounding the night"
    )
    night_weight: float = Field(default=10.0, gt=0)
    mu: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.fractions is not None and (
            not self.fractions or any(f <= 0 for f in self.fractions)
        ):
            raise ValueError("fractions must be a nonempty list of positive numbers")
        low, high = self.period_range
        if not 0 < low < high:
            raise ValueError(f"period_range must satisfy 0 < low < high, got {self.period_range}")
        dusk, dawn = self.night_hours
        if not (0 <= dawn < dusk <= 24):
            raise ValueError(f"night_hours must satisfy 0 <= dawn < dusk <= 24, got {self.night_hours}")
        return self

    @property
    def sunrise(self) -> int:
        return int(round(self.night_hours[1] * 60))

    @property
    def sunset(self) -> int:
        return int(round(self.night_hours[0] * 60))


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    parameter: Literal["lam", "kappa"] = "kappa"
    values: Optional[List[float]] = Field(
        default=None, min_length=1, description="grid points; a lam sweep defaults to a path around lam"
    )
    replicates: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_values(self):
        if self.values is None:
            if self.parameter == "kappa":
                raise ValueError("a kappa sweep needs explicit values")
            return self
        if self.parameter == "lam" and any(v <= 0 for v in self.values):
            raise ValueError("lam values must be positive")
        if self.parameter == "kappa" and any(v < 0 or v != int(v) for v in self.values):
            raise ValueError("kappa values must be nonnegative integers")
        return self


class ExperimentConfig(BaseModel):
    """A complete experiment: feeder, scenario, recovery, applications and outputs."""

    model_config = ConfigDict(extra="forbid")

    format: Literal["gridedge-experiment/1"] = EXPERIMENT_FORMAT
    name: str = "experiment"
    feeder: Union[BuiltinFeeder, str]
    scenario: ScenarioConfig
    recovery: RecoveryConfig = Field(default_factory=RecoveryConfig)
    apps: AppsConfig = Field(default_factory=AppsConfig)
    sweep: Optional[SweepConfig] = None
    output: str = "runs/experiment"

    _base_dir: Path = PrivateAttr(default_factory=Path)

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def feeder_path(self) -> Optional[Path]:
        if not isinstance(self.feeder, str):
            return None
        path = Path(self.feeder)
        return path if path.is_absolute() else self._base_dir / path

    def load_feeder(self) -> FeederDescription:
        if isinstance(self.feeder, BuiltinFeeder):
            return self.feeder.build()
        return load_feeder(self.feeder_path())

    def with_overrides(
        self,
        seed: Optional[int] = None,
        out: Optional[str] = None,
        mode: Optional[str] = None,
        kappa: Optional[int] = None,
    ) -> "ExperimentConfig":
        """A validated copy with command-line overrides applied."""
        data = self.model_dump(mode="json")
        if seed is not None:
            data["scenario"]["seed"] = seed
        if kappa is not None:
            data["scenario"]["kappa"] = kappa
        if mode is not None:
            data["recovery"]["mode"] = mode
        if out is not None:
            data["output"] = str(out)
        cfg = parse_config(data, "<overrides>")
        cfg._base_dir = self._base_dir
        return cfg


def parse_config(data: Any, source: str) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: an experiment config must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: invalid experiment config\n{validation_message(e)}") from e


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


class ExperimentConfigLoader:
    def __init__(self, yaml_file: Union[str, Path]):
        self.yaml_file = Path(yaml_file)

    def load(self) -> ExperimentConfig:
        if not self.yaml_file.exists():
            raise ConfigError(f"Config file not found: {self.yaml_file}")
        try:
            data: Dict[str, Any] = YAML(typ="safe").load(self.yaml_file.read_text())
        except YAMLError as e:
            raise ConfigError(f"Cannot parse config file {self.yaml_file}: {e}") from e

        cfg = parse_config(data, str(self.yaml_file))
        cfg._base_dir = self.yaml_file.resolve().parent

        path = cfg.feeder_path()
        if path is not None and not path.exists():
            raise ConfigError(f"{self.yaml_file}: feeder file not found: {path}")
        logger.debug(f"loaded experiment '{cfg.name}' from {self.yaml_file}")
        return cfg
