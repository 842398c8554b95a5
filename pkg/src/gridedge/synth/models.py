from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from gridedge.feeder.models import SensorPlacement
from gridedge.recover.operators import AveragingOperator, FeederOperator
from gridedge.shared.constants import (
    BOUND_FLOOR,
    DPMU_ACCURACY,
    FEEDER_BOUND_FRACTION,
    METER_INTERVAL,
    MINUTES_PER_DAY,
    PHASES,
    POWER_FACTOR_RANGE,
    SENSOR_ROWS,
    SMART_METER_ACCURACY,
)
from gridedge.shared.exceptions import BadParameter


Range = Tuple[float, float]

APPLIANCE = "appliance"
EV = "ev"


def _ordered(value: Range, name: str) -> Range:
    low, high = value
    if low < 0 or high < low:
        raise ValueError(f"{name} must satisfy 0 <= low <= high, got {value}")
    return value


class EVConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rating: float = Field(default=7000.0, gt=0, description="charging power in W")
    sessions: int = Field(default=0, ge=0, description="charging sessions in the horizon")
    window: Optional[Tuple[int, int]] = Field(
        default=None, description="start-time window in horizon minutes, default whole horizon"
    )
    duration: Tuple[int, int] = (60, 240)
    power_factor: float = Field(default=0.98, gt=0, le=1)

    @field_validator("duration")
    @classmethod
    def _check_duration(cls, value):
        if value[0] < 1 or value[1] < value[0]:
            raise ValueError(f"duration must satisfy 1 <= low <= high, got {value}")
        return value


class ApplianceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rate: float = Field(default=6.0, ge=0, description="events per house per day")
    rating: Range = (300.0, 2500.0)
    duration: Tuple[int, int] = (5, 60)
    max_overlap: int = Field(default=3, ge=1)

    @field_validator("rating")
    @classmethod
    def _check_rating(cls, value):
        return _ordered(value, "rating")

    @field_validator("duration")
    @classmethod
    def _check_duration(cls, value):
        if value[0] < 1 or value[1] < value[0]:
            raise ValueError(f"duration must satisfy 1 <= low <= high, got {value}")
        return value


class PVConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fraction: float = Field(default=0.0, ge=0, le=1)
    capacity: Union[float, List[float]] = Field(
        default=4000.0, description="W per PV house, or one entry per house"
    )
    capacity_spread: float = Field(default=0.0, ge=0, lt=1)
    pattern: Literal["smooth", "variable"] = "smooth"
    sunrise: int = Field(default=360, ge=0, lt=MINUTES_PER_DAY)
    sunset: int = Field(default=1080, gt=0, le=MINUTES_PER_DAY)
    cloud_volatility: float = Field(default=0.04, ge=0)
    cloud_floor: float = Field(default=0.3, ge=0, le=1)
    reactive_ratio: float = Field(
        default=0.0, description="Q component as a multiple of the PV active power"
    )

    @field_validator("capacity")
    @classmethod
    def _check_capacity(cls, value):
        values = value if isinstance(value, list) else [value]
        if any(v < 0 for v in values):
            raise ValueError("PV capacities must be nonnegative")
        return value

    @model_validator(mode="after")
    def _check_daylight(self):
        if self.sunset <= self.sunrise:
            raise ValueError("sunset must come after sunrise")
        return self


class HVACConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = False
    period: Tuple[int, int] = (10, 35)
    magnitude: float = Field(default=1500.0, ge=0)
    duty: float = Field(default=0.5, gt=0, lt=1)
    fraction: float = Field(default=1.0, ge=0, le=1)

    @field_validator("period")
    @classmethod
    def _check_period(cls, value):
        if value[0] < 2 or value[1] < value[0]:
            raise ValueError(f"period must satisfy 2 <= low <= high, got {value}")
        return value


class ScenarioConfig(BaseModel):
    """Synthetic scenario: load composition, metering and sensing."""

    model_config = ConfigDict(extra="forbid")

    n_houses: int = Field(ge=1)
    horizon: int = Field(ge=2, description="T, minutes")
    start_minute: int = Field(default=0, ge=0, lt=MINUTES_PER_DAY)
    base_load: Range = (200.0, 600.0)
    power_factor: Range = POWER_FACTOR_RANGE
    appliances: ApplianceConfig = Field(default_factory=ApplianceConfig)
    ev: EVConfig = Field(default_factory=EVConfig)
    pv: PVConfig = Field(default_factory=PVConfig)
    hvac: HVACConfig = Field(default_factory=HVACConfig)
    meter_interval: int = Field(default=METER_INTERVAL, ge=1)
    meter_schedule: Literal["synchronous", "asynchronous"] = "synchronous"
    smart_meter_accuracy: float = Field(default=SMART_METER_ACCURACY, ge=0, lt=1)
    dpmu_accuracy: float = Field(default=DPMU_ACCURACY, ge=0, lt=1)
    feeder_bound_fraction: float = Field(default=FEEDER_BOUND_FRACTION, gt=0)
    bound_floor: float = Field(default=BOUND_FLOOR, gt=0)
    kappa: Optional[int] = Field(default=None, ge=0, description="sensors used, None for all")
    operating_point: Literal["zero-load", "average", "refresh"] = "average"
    seed: int = Field(default=0, ge=0)

    @field_validator("base_load")
    @classmethod
    def _check_base(cls, value):
        return _ordered(value, "base_load")

    @field_validator("power_factor")
    @classmethod
    def _check_power_factor(cls, value):
        low, high = value
        if not 0 < low <= high <= 1:
            raise ValueError(f"power factor range must lie in (0, 1], got {value}")
        return value

    @model_validator(mode="after")
    def _check_scenario(self):
        if self.ev.rating <= self.appliances.rating[1]:
            raise ValueError(
                f"ev.rating ({self.ev.rating} W) must exceed the largest appliance "
                f"rating ({self.appliances.rating[1]} W)"
            )
        if self.ev.window is not None:
            low, high = self.ev.window
            if not 1 <= low < high <= self.horizon:
                raise ValueError("ev.window must satisfy 1 <= low < high <= horizon")
        if isinstance(self.pv.capacity, list) and len(self.pv.capacity) != self.n_houses:
            raise ValueError(
                f"pv.capacity lists {len(self.pv.capacity)} houses, expected {self.n_houses}"
            )
        return self


@dataclass(frozen=True)
class TruthEvent:
    """Rectangular load change at ``house`` (1-based) over [start, end)."""

    house: int
    start: int
    end: int
    dP: float
    dQ: float
    kind: str = APPLIANCE

    def __post_init__(self):
        if not self.start < self.end:
            raise BadParameter(f"event must have start < end, got [{self.start}, {self.end})")


@dataclass
class LoadMatrix:
    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        if self.P.shape != self.Q.shape or self.P.ndim != 2:
            raise BadParameter(f"P {self.P.shape} and Q {self.Q.shape} must be equal N x T")

    @classmethod
    def from_stacked(cls, X: np.ndarray) -> "LoadMatrix":
        X = np.asarray(X, dtype=float)
        n = X.shape[0] // 2
        return cls(P=X[:n], Q=X[n:])

    @property
    def N(self) -> int:
        return self.P.shape[0]

    @property
    def T(self) -> int:
        return self.P.shape[1]

    @property
    def X(self) -> np.ndarray:
        return np.vstack([self.P, self.Q])


@dataclass
class GroundTruth:
    loads: LoadMatrix
    pv: np.ndarray
    pattern: np.ndarray
    capacities: np.ndarray
    events: List[TruthEvent] = field(default_factory=list)
    hvac: Optional[np.ndarray] = None
    start_minute: int = 0

    @property
    def ev_events(self) -> List[TruthEvent]:
        return [event for event in self.events if event.kind == EV]


@dataclass
class MeasurementSet:
    """Noisy measurements, their operators and error bounds."""

    gamma: np.ndarray
    averaging: AveragingOperator
    gamma_bounds: np.ndarray
    Z: Optional[np.ndarray] = None
    feeder: Optional[FeederOperator] = None
    z_bounds: Optional[np.ndarray] = None
    sensor_channels: List[str] = field(default_factory=list)

    @property
    def T_s(self) -> int:
        return self.gamma.shape[1]

    @property
    def kappa(self) -> int:
        return len(self.sensor_channels) // SENSOR_ROWS


def load_channels(n: int) -> List[str]:
    return [f"P{i}" for i in range(1, n + 1)] + [f"Q{i}" for i in range(1, n + 1)]


def sensor_channels(sensors: Sequence[SensorPlacement]) -> List[str]:
    return [
        f"{sensor.label}.{quantity}{phase}"
        for sensor in sensors
        for quantity in ("P", "Q")
        for phase in PHASES
    ]
