import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from gridedge.feeder.admittance import AdmittanceModel
from gridedge.feeder.models import HEAD_SENSOR, LATERAL_SENSOR, SensorPlacement
from gridedge.shared.constants import PHASES
from gridedge.shared.exceptions import (
    BadParameter,
    ConfigError,
    NumericalError,
    PowerFlowDivergence,
)


logger = logging.getLogger(__name__)

# 1e-9 per unit on a 1 kVA base
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class InjectionVector:
    """Complex power injections (VA) at every PQ-bus node; loads are negative."""

    s: np.ndarray

    @classmethod
    def from_demand(cls, adm: AdmittanceModel, x: np.ndarray) -> "InjectionVector":
        """Build injections from a stacked demand vector x = [P; Q] of length 2N."""
        x = np.asarray(x, dtype=float)
        n = adm.n_loads
        if x.shape != (2 * n,):
            raise BadParameter(f"demand vector has shape {x.shape}, expected {(2 * n,)}")
        return cls(s=adm.injection_from_demand(x[:n], x[n:]))

    def scaled(self, factor: float) -> "InjectionVector":
        return InjectionVector(s=self.s * factor)


@dataclass(frozen=True)
class VoltageProfile:
    v: np.ndarray
    iterations: int
    residual: float


def power_mismatch(adm: AdmittanceModel, v0: np.ndarray, v: np.ndarray, s: np.ndarray):
    """Entrywise mismatch diag(v)(YL [v0; v])* - s."""
    current = adm.YL @ np.concatenate([v0, v])
    return v * np.conj(current) - s


def solve_fixed_point(
    adm: AdmittanceModel,
    inj: InjectionVector,
    v0: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> VoltageProfile:
    """Solve the multiphase power flow by Z-bus fixed-point iteration.

    Iterates v <- YLL^-1 (conj(s / v) - YL0 v0) from the zero-load voltage
    until the largest power mismatch drops below ``tol`` (VA).

    Raises:
        PowerFlowDivergence: ``max_iter`` exceeded or the iterate blew up.
        NumericalError: an iterate hit a zero voltage.
    """
    if tol <= 0:
        raise BadParameter(f"tol must be positive, got {tol}")
    v0 = adm.v0 if v0 is None else np.asarray(v0, dtype=complex)
    s = np.asarray(inj.s, dtype=complex)
    w = adm.solve(-adm.YL0 @ v0)

    v = w
    residual = np.inf
    iteration = 0
    for iteration in range(1, max_iter + 1):
        if np.any(v == 0):
            raise NumericalError(f"zero voltage iterate at iteration {iteration}")
        v = w + adm.solve(np.conj(s / v))
        residual = float(np.max(np.abs(power_mismatch(adm, v0, v, s)), initial=0.0))
        if not np.isfinite(residual):
            break
        if residual <= tol:
            logger.debug(f"power flow converged in {iteration} iterations")
            return VoltageProfile(v=v, iterations=iteration, residual=residual)

    raise PowerFlowDivergence(
        f"fixed-point power flow did not converge in {iteration} iterations "
        f"(residual {residual:.3e} VA)",
        residual=residual,
        iterations=iteration,
    )


def feasibility_envelope(
    adm: AdmittanceModel,
    inj: InjectionVector,
    v0: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    steps: int = 20,
    upper: float = 1.0,
) -> float:
    """Largest loading multiplier in [0, upper] at which the iteration converges."""
    def converges(factor: float) -> bool:
        try:
            solve_fixed_point(adm, inj.scaled(factor), v0, tol, max_iter)
        except (PowerFlowDivergence, NumericalError):
            return False
        return True

    if converges(upper):
        return upper
    low, high = 0.0, upper
    for _ in range(steps):
        middle = 0.5 * (low + high)
        if converges(middle):
            low = middle
        else:
            high = middle
    return low


def _slot_rows(phases: Sequence[str], values: np.ndarray) -> np.ndarray:
    """Place per-phase complex values into the a/b/c slots, zero elsewhere."""
    out = np.zeros(len(PHASES), dtype=complex)
    for phase, value in zip(phases, values):
        out[PHASES.index(phase)] = value
    return out


def feeder_quantities(
    adm: AdmittanceModel,
    v0: Optional[np.ndarray],
    profile: VoltageProfile,
    sensors: Sequence[SensorPlacement],
) -> np.ndarray:
    """Nonlinear sensor readings for a converged voltage profile.

    Each sensor contributes ``[P_a, P_b, P_c, Q_a, Q_b, Q_c]``. The head
    sensor reads diag(v0) conj(Y0 [v0; v]); a lateral sensor reads the power
    entering its bus through the upstream line.
    """
    v0 = adm.v0 if v0 is None else np.asarray(v0, dtype=complex)
    v = np.asarray(profile.v)
    if v.shape != (adm.n_nodes,):
        raise BadParameter(f"voltage profile has shape {v.shape}, expected {(adm.n_nodes,)}")
    full = np.concatenate([v0, v])
    readings = []
    for sensor in sensors:
        if sensor.kind == HEAD_SENSOR:
            s = v0 * np.conj(adm.Y0 @ full)
        elif sensor.kind == LATERAL_SENSOR:
            branch = adm.branches.get(sensor.bus)
            if branch is None:
                raise ConfigError(f"sensor {sensor.label}: bus has no upstream line")
            upstream = np.array(
                [v0[PHASES.index(ph)] if pos < 0 else v[pos]
                 for ph, pos in zip(branch.phases, branch.upstream)]
            )
            downstream = v[list(branch.downstream)]
            flow = downstream * np.conj(branch.y @ (upstream - downstream))
            s = _slot_rows(branch.phases, flow)
        else:
            raise ConfigError(f"unknown sensor kind '{sensor.kind}'")
        readings.append(np.concatenate([s.real, s.imag]))
    if not readings:
        return np.zeros(0)
    return np.concatenate(readings)


def line_losses(adm: AdmittanceModel, v0: Optional[np.ndarray], v: np.ndarray) -> complex:
    """Total complex series losses over the feeder tree."""
    v0 = adm.v0 if v0 is None else np.asarray(v0, dtype=complex)
    total = 0.0 + 0.0j
    for branch in adm.branches.values():
        upstream = np.array(
            [v0[PHASES.index(ph)] if pos < 0 else v[pos]
             for ph, pos in zip(branch.phases, branch.upstream)]
        )
        drop = upstream - v[list(branch.downstream)]
        total += np.sum(drop * np.conj(branch.y @ drop))
    return complex(total)
