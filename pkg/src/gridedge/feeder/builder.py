"""Programmatic test feeders.

All feeders are wye-connected with overhead-line impedances given per
kilometre. The stock and radial feeders run at a 12.47 kV primary
(7.2 kV line-to-neutral) unless a secondary voltage is asked for; the
two-bus feeder is 230 V.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np

from gridedge.feeder.models import (
    HEAD_SENSOR,
    LATERAL_SENSOR,
    BusRecord,
    FeederDescription,
    LineRecord,
    LoadRecord,
    SensorPlacement,
    to_pairs,
)
from gridedge.shared.constants import PHASES
from gridedge.shared.exceptions import BadParameter


logger = logging.getLogger(__name__)

NOMINAL_VOLTAGE = 230.0
PRIMARY_VOLTAGE = 7200.0
SELF_IMPEDANCE = 0.28 + 0.30j  # ohm / km
MUTUAL_IMPEDANCE = 0.05 + 0.18j  # ohm / km


def nominal_voltage(magnitude: float = NOMINAL_VOLTAGE) -> np.ndarray:
    """Balanced positive-sequence phasors for phases a, b, c."""
    angles = np.deg2rad([0.0, -120.0, 120.0])
    return magnitude * np.exp(1j * angles)


def line_admittance(
    length_m: float,
    phases: Sequence[str] = PHASES,
    self_impedance: complex = SELF_IMPEDANCE,
    mutual_impedance: complex = MUTUAL_IMPEDANCE,
) -> np.ndarray:
    """Series admittance block (S) of a line segment on the given phases."""
    if length_m <= 0:
        raise BadParameter(f"line length must be positive, got {length_m}")
    k = len(phases)
    z = np.full((k, k), mutual_impedance, dtype=complex)
    np.fill_diagonal(z, self_impedance)
    return np.linalg.inv(z * length_m / 1000.0)


class _FeederBuilder:
    def __init__(self, name: str, lossless: bool = False):
        self.name = name
        self.lossless = lossless
        self.buses: List[BusRecord] = []
        self.lines: List[LineRecord] = []
        self.loads: List[LoadRecord] = []
        self.sensors: List[SensorPlacement] = []

    def bus(self, bus_id: str, phases: Sequence[str] = PHASES, reference: bool = False):
        self.buses.append(BusRecord(id=bus_id, phases=list(phases), is_reference=reference))
        return self

    def line(self, from_bus: str, to_bus: str, length_m: float, phases: Sequence[str] = PHASES):
        self_z, mutual_z = SELF_IMPEDANCE, MUTUAL_IMPEDANCE
        if self.lossless:
            self_z, mutual_z = 1j * self_z.imag, 1j * mutual_z.imag
        y = line_admittance(length_m, phases, self_z, mutual_z)
        # inv() of a symmetric matrix can pick up rounding asymmetry
        y = 0.5 * (y + y.T)
        self.lines.append(
            LineRecord(from_bus=from_bus, to_bus=to_bus, phases=list(phases), admittance=to_pairs(y))
        )
        return self

    def load(self, bus: str, phase: str):
        self.loads.append(LoadRecord(bus=bus, phase=phase, index=len(self.loads) + 1))
        return self

    def sensor(self, kind: str, bus: str, downstream: Sequence[int] = None):
        self.sensors.append(
            SensorPlacement(
                kind=kind,
                bus=bus,
                downstream=None if downstream is None else sorted(downstream),
            )
        )
        return self

    def build(self, v0: np.ndarray) -> FeederDescription:
        desc = FeederDescription(
            name=self.name,
            buses=self.buses,
            lines=self.lines,
            loads=sorted(self.loads, key=lambda load: load.index),
            v0=to_pairs(v0),
            sensors=self.sensors,
        )
        logger.debug(
            f"built feeder '{desc.name}': {len(desc.buses)} buses, {desc.n_loads} loads"
        )
        return desc


def stock_feeder(lossless: bool = False, voltage: float = PRIMARY_VOLTAGE) -> FeederDescription:
    """Four-bus three-phase test feeder with four single-phase houses.

    ``sub`` feeds ``n1`` over 200 m; ``n1`` feeds the laterals ``n2`` and
    ``n3`` over 150 m each. Houses 1 and 2 sit on ``n2`` (phases a, b),
    houses 3 and 4 on ``n3`` (phases a, c). Sensors: feeder head plus both
    lateral heads. ``voltage`` is the line-to-neutral magnitude at ``sub``.
    """
    builder = _FeederBuilder("stock4-lossless" if lossless else "stock4", lossless)
    builder.bus("sub", reference=True).bus("n1").bus("n2").bus("n3")
    builder.line("sub", "n1", 200.0).line("n1", "n2", 150.0).line("n1", "n3", 150.0)
    builder.load("n2", "a").load("n2", "b").load("n3", "a").load("n3", "c")
    builder.sensor(HEAD_SENSOR, "sub")
    builder.sensor(LATERAL_SENSOR, "n2", [1, 2])
    builder.sensor(LATERAL_SENSOR, "n3", [3, 4])
    return builder.build(nominal_voltage(voltage))


def two_bus_feeder(
    impedance: complex,
    phase: str = "a",
    v0: np.ndarray = None,
) -> FeederDescription:
    """Reference bus feeding one single-phase house through impedance ``impedance``."""
    if impedance == 0:
        raise BadParameter("line impedance must be nonzero")
    builder = _FeederBuilder("two-bus")
    builder.bus("sub", reference=True).bus("house", phases=[phase])
    y = np.array([[1.0 / impedance]])
    builder.lines.append(
        LineRecord(from_bus="sub", to_bus="house", phases=[phase], admittance=to_pairs(y))
    )
    builder.load("house", phase)
    builder.sensor(HEAD_SENSOR, "sub")
    return builder.build(nominal_voltage() if v0 is None else np.asarray(v0, dtype=complex))


def radial_feeder(
    n_houses: int,
    n_laterals: int,
    trunk_length: float = 150.0,
    lateral_segment: float = 60.0,
    lossless: bool = False,
    voltage: float = PRIMARY_VOLTAGE,
) -> FeederDescription:
    """Trunk-and-lateral feeder with houses spread round-robin over laterals.

    Trunk bus ``t{k}`` feeds lateral head ``l{k}``; each lateral continues as a
    chain of poles ``p{k}_{j}`` carrying up to three houses, one per phase.
    Sensors: feeder head and every lateral head.
    """
    if n_houses < 1 or n_laterals < 1:
        raise BadParameter("a radial feeder needs at least one house and one lateral")
    n_laterals = min(n_laterals, n_houses)
    builder = _FeederBuilder(f"radial{n_houses}x{n_laterals}", lossless)
    builder.bus("sub", reference=True)

    members: List[List[int]] = [[] for _ in range(n_laterals)]
    for n in range(1, n_houses + 1):
        members[(n - 1) % n_laterals].append(n)

    placements: List[Tuple[int, str, str]] = []
    upstream = "sub"
    for k, houses in enumerate(members, start=1):
        trunk, head = f"t{k}", f"l{k}"
        builder.bus(trunk).bus(head)
        builder.line(upstream, trunk, trunk_length).line(trunk, head, lateral_segment)
        previous = head
        for j in range(int(np.ceil(len(houses) / len(PHASES)))):
            pole = f"p{k}_{j + 1}"
            builder.bus(pole).line(previous, pole, lateral_segment)
            previous = pole
            for slot, house in enumerate(houses[j * len(PHASES) : (j + 1) * len(PHASES)]):
                placements.append((house, pole, PHASES[slot]))
        upstream = trunk

    for _, pole, phase in sorted(placements):
        builder.load(pole, phase)

    builder.sensor(HEAD_SENSOR, "sub")
    for k, houses in enumerate(members, start=1):
        builder.sensor(LATERAL_SENSOR, f"l{k}", houses)
    return builder.build(nominal_voltage(voltage))
