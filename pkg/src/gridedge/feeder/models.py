from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gridedge.shared.constants import FEEDER_FORMAT, PHASES


Phase = Literal["a", "b", "c"]
ComplexPair = Tuple[float, float]

HEAD_SENSOR = "feeder-head-power"
LATERAL_SENSOR = "lateral-power"
SENSOR_KINDS = (HEAD_SENSOR, LATERAL_SENSOR)


def to_complex(pairs) -> np.ndarray:
    """Decode nested ``[re, im]`` pairs into a complex array."""
    data = np.asarray(pairs, dtype=float)
    return data[..., 0] + 1j * data[..., 1]


def to_pairs(values: np.ndarray):
    values = np.asarray(values, dtype=complex)
    return np.stack([values.real, values.imag], axis=-1).tolist()


class BusRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    phases: List[Phase] = Field(default_factory=lambda: list(PHASES))
    is_reference: bool = False


class LineRecord(BaseModel):
    """Series element between two buses.

    ``admittance`` is the k x k series admittance block in siemens for the
    k phases listed in ``phases``, each entry encoded as ``[re, im]``.
    """

    model_config = ConfigDict(frozen=True)

    from_bus: str
    to_bus: str
    phases: List[Phase] = Field(default_factory=lambda: list(PHASES))
    admittance: List[List[ComplexPair]]

    @property
    def y(self) -> np.ndarray:
        return to_complex(self.admittance)

    @model_validator(mode="after")
    def _check_block(self):
        y = self.y
        k = len(self.phases)
        if y.shape != (k, k):
            raise ValueError(
                f"line {self.from_bus}->{self.to_bus}: admittance block is "
                f"{y.shape}, expected {(k, k)}"
            )
        scale = max(np.abs(y).max(), 1e-300)
        if np.abs(y - y.T).max() > 1e-12 * scale:
            raise ValueError(
                f"line {self.from_bus}->{self.to_bus}: admittance block is not symmetric"
            )
        return self


class LoadRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    bus: str
    phase: Phase
    index: int = Field(ge=1, description="load-node index n in 1..N")


class SensorPlacement(BaseModel):
    """Feeder-level power sensor (D-PMU).

    ``downstream`` lists the load-node indices the sensor aggregates. When
    omitted it is derived from the feeder tree.
    """

    model_config = ConfigDict(frozen=True)

    kind: str
    bus: str
    downstream: Optional[List[int]] = None
    name: Optional[str] = None

    @property
    def label(self) -> str:
        return self.name or f"{self.kind}@{self.bus}"


class FeederDescription(BaseModel):
    model_config = ConfigDict(frozen=True)

    format: Literal["gridedge-feeder/1"] = FEEDER_FORMAT
    name: str = "feeder"
    buses: List[BusRecord]
    lines: List[LineRecord]
    loads: List[LoadRecord]
    v0: List[ComplexPair] = Field(min_length=3, max_length=3)
    sensors: List[SensorPlacement] = Field(default_factory=list)

    @property
    def n_loads(self) -> int:
        return len(self.loads)

    @property
    def reference(self) -> BusRecord:
        return next(bus for bus in self.buses if bus.is_reference)

    @property
    def reference_voltage(self) -> np.ndarray:
        return to_complex(self.v0)

    def loads_by_index(self) -> List[LoadRecord]:
        return sorted(self.loads, key=lambda load: load.index)

    def with_sensors(self, sensors: List[SensorPlacement]) -> "FeederDescription":
        return self.model_copy(update={"sensors": list(sensors)})

    @model_validator(mode="after")
    def _check_structure(self):
        references = [bus for bus in self.buses if bus.is_reference]
        if len(references) != 1:
            raise ValueError(
                f"exactly one reference bus is required, found {len(references)}"
            )
        if sorted(references[0].phases) != list(PHASES):
            raise ValueError("the reference bus must be three-phase")

        bus_phases = {bus.id: set(bus.phases) for bus in self.buses}
        if len(bus_phases) != len(self.buses):
            raise ValueError("bus ids must be unique")
        for line in self.lines:
            for end in (line.from_bus, line.to_bus):
                if end not in bus_phases:
                    raise ValueError(f"line references unknown bus '{end}'")
                if not set(line.phases) <= bus_phases[end]:
                    raise ValueError(
                        f"line {line.from_bus}->{line.to_bus} phases {line.phases} "
                        f"not present at bus '{end}'"
                    )

        indices = sorted(load.index for load in self.loads)
        if indices != list(range(1, len(indices) + 1)):
            raise ValueError("load-node indices must cover 1..N exactly once")
        for load in self.loads:
            if load.bus not in bus_phases:
                raise ValueError(f"load {load.index} references unknown bus '{load.bus}'")
            if load.phase not in bus_phases[load.bus]:
                raise ValueError(
                    f"load {load.index}: phase {load.phase} not present at bus '{load.bus}'"
                )
            if load.bus == references[0].id:
                raise ValueError(f"load {load.index} is attached to the reference bus")
        return self
