import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from gridedge.feeder.admittance import AdmittanceModel, node_load_matrix
from gridedge.feeder.models import HEAD_SENSOR, LATERAL_SENSOR, SensorPlacement
from gridedge.powerflow.solver import InjectionVector, solve_fixed_point
from gridedge.shared.constants import PHASES, SENSOR_ROWS
from gridedge.shared.exceptions import BadParameter, ConfigError, ModelError, NumericalError


logger = logging.getLogger(__name__)

ZERO_LOAD_RESIDUAL = 1e-10


@dataclass(frozen=True)
class LinearizedModel:
    """Fixed-point linearization v ~ w + M x around ``vbar``.

    ``x`` is the stacked demand [P; Q] of the N load nodes (consumption
    positive), so ``M`` is the negated injection sensitivity. ``H`` stacks
    six real rows per placed sensor.
    """

    w: np.ndarray
    vbar: np.ndarray
    M: np.ndarray
    H: np.ndarray
    adm: AdmittanceModel
    sensors: Tuple[SensorPlacement, ...] = ()

    def voltage(self, x: np.ndarray) -> np.ndarray:
        return self.w + self.M @ np.asarray(x, dtype=float)

    def readings(self, x: np.ndarray) -> np.ndarray:
        return self.H @ np.asarray(x, dtype=float)


def zero_load_voltage(adm: AdmittanceModel, v0: Optional[np.ndarray] = None) -> np.ndarray:
    """Voltage w solving YLL w = -YL0 v0."""
    v0 = adm.v0 if v0 is None else np.asarray(v0, dtype=complex)
    rhs = -adm.YL0 @ v0
    w = adm.solve(rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    residual = np.linalg.norm(adm.YLL @ w - rhs) / scale
    if not np.isfinite(residual) or residual > ZERO_LOAD_RESIDUAL:
        raise ModelError(
            f"zero-load solve is inaccurate (relative residual {residual:.3e}, "
            f"condition {adm.condition:.3e})",
            condition=adm.condition,
        )
    return w


def _validate_sensor(adm: AdmittanceModel, sensor: SensorPlacement) -> None:
    if sensor.kind == HEAD_SENSOR:
        if sensor.bus != adm.reference:
            raise ConfigError(
                f"sensor {sensor.label}: head sensors must sit on the reference bus"
            )
    elif sensor.kind == LATERAL_SENSOR:
        if sensor.bus not in adm.branches:
            raise ConfigError(
                f"sensor {sensor.label}: '{sensor.bus}' is not a non-reference feeder bus"
            )
    else:
        raise ConfigError(f"sensor {sensor.label}: unknown sensor kind '{sensor.kind}'")

    covered = adm.downstream_loads[sensor.bus]
    if sensor.downstream is not None and set(sensor.downstream) != set(covered):
        raise ConfigError(
            f"sensor {sensor.label}: declared downstream loads {sorted(sensor.downstream)} "
            f"differ from the feeder tree {sorted(covered)}"
        )


def _sensor_block(
    adm: AdmittanceModel, M: np.ndarray, vbar: np.ndarray, sensor: SensorPlacement
) -> np.ndarray:
    """Complex 3 x 2N block G with s(x) = G x for one sensor."""
    if sensor.kind == HEAD_SENSOR:
        # additive offset diag(v0) conj(Y0 [v0; w]) cancels for shunt-free feeders
        return adm.v0[:, None] * np.conj(adm.Y0L) @ np.conj(M)

    branch = adm.branches[sensor.bus]
    up = np.array(
        [np.zeros(M.shape[1]) if pos < 0 else M[pos] for pos in branch.upstream]
    )
    down = M[list(branch.downstream)]
    head_voltage = vbar[list(branch.downstream)]
    flow = head_voltage[:, None] * (np.conj(branch.y) @ np.conj(up - down))
    G = np.zeros((len(PHASES), M.shape[1]), dtype=complex)
    for row, phase in zip(flow, branch.phases):
        G[PHASES.index(phase)] = row
    return G


def assemble_measurement_operator(
    lin: LinearizedModel,
    adm: AdmittanceModel,
    sensors: Sequence[SensorPlacement],
) -> np.ndarray:
    """Real operator H (6 rows per sensor) mapping demand x to sensor readings.

    Rows per sensor are ``[P_a, P_b, P_c, Q_a, Q_b, Q_c]``; H @ 0 = 0.
    """
    blocks = []
    for sensor in sensors:
        _validate_sensor(adm, sensor)
        G = _sensor_block(adm, lin.M, lin.vbar, sensor)
        blocks.append(np.vstack([G.real, G.imag]))
    if not blocks:
        return np.zeros((0, lin.M.shape[1]))
    H = np.vstack(blocks)
    assert H.shape[0] == SENSOR_ROWS * len(sensors)
    return H


def linearize(
    adm: AdmittanceModel,
    operating_point: Optional[np.ndarray] = None,
    sensors: Sequence[SensorPlacement] = (),
) -> LinearizedModel:
    """Fixed-point-method linearization at ``operating_point`` (default: w).

    Raises:
        NumericalError: the operating point has a zero voltage entry.
    """
    w = zero_load_voltage(adm)
    vbar = w if operating_point is None else np.asarray(operating_point, dtype=complex)
    if vbar.shape != w.shape:
        raise BadParameter(f"operating point has shape {vbar.shape}, expected {w.shape}")
    if np.any(vbar == 0):
        raise NumericalError("operating point has a zero voltage entry; cannot divide")

    E = node_load_matrix(adm)
    B = adm.solve(E / np.conj(vbar)[:, None])
    M = np.hstack([-B, 1j * B])
    lin = LinearizedModel(w=w, vbar=vbar, M=M, H=np.zeros((0, M.shape[1])), adm=adm)
    H = assemble_measurement_operator(lin, adm, sensors)
    logger.debug(f"linearized feeder with {len(sensors)} sensors, H {H.shape}")
    return LinearizedModel(w=w, vbar=vbar, M=M, H=H, adm=adm, sensors=tuple(sensors))


def refresh_operating_point(lin: LinearizedModel, latest_loads: np.ndarray) -> LinearizedModel:
    """Re-linearize at the power-flow solution for the latest demand estimate.

    Raises:
        PowerFlowDivergence: the power flow at ``latest_loads`` diverges.
    """
    adm = lin.adm
    latest_loads = np.asarray(latest_loads, dtype=float)
    if latest_loads.shape != (2 * adm.n_loads,):
        raise BadParameter(
            f"latest loads have shape {latest_loads.shape}, expected {(2 * adm.n_loads,)}"
        )
    profile = solve_fixed_point(adm, InjectionVector.from_demand(adm, latest_loads))
    return linearize(adm, profile.v, lin.sensors)
