import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gridedge.feeder.admittance import AdmittanceModel
from gridedge.feeder.linearize import linearize, refresh_operating_point
from gridedge.feeder.models import FeederDescription, SensorPlacement
from gridedge.powerflow.solver import (
    InjectionVector,
    feasibility_envelope,
    feeder_quantities,
    solve_fixed_point,
)
from gridedge.recover.operators import AveragingOperator, FeederOperator
from gridedge.shared.constants import SENSOR_ROWS
from gridedge.shared.exceptions import ConfigError, PowerFlowDivergence
from gridedge.synth.loads import scenario_rng
from gridedge.synth.models import GroundTruth, MeasurementSet, ScenarioConfig, sensor_channels


logger = logging.getLogger(__name__)


def uniform_noise(clean: np.ndarray, accuracy: float, rng: np.random.Generator) -> np.ndarray:
    """Entrywise error uniform in +-(accuracy x |reading|)."""
    return rng.uniform(-1.0, 1.0, clean.shape) * accuracy * np.abs(clean)


def select_sensors(
    sensors: Sequence[SensorPlacement], kappa: Optional[int]
) -> List[SensorPlacement]:
    """First ``kappa`` placements of the feeder (all when ``kappa`` is None)."""
    if kappa is None:
        return list(sensors)
    if kappa > len(sensors):
        raise ConfigError(f"kappa={kappa} but the feeder declares {len(sensors)} sensors")
    return list(sensors[:kappa])


def sample_smart_meters(
    gt: GroundTruth, cfg: ScenarioConfig
) -> Tuple[np.ndarray, AveragingOperator]:
    """Window-averaged, noisy smart-meter readings Gamma (2N x T_s).

    Raises:
        ConfigError: the meter interval does not divide the horizon.
    """
    rng = scenario_rng(cfg.seed, 10)
    offsets = None
    if cfg.meter_schedule == "asynchronous":
        offsets = rng.integers(0, cfg.meter_interval, gt.loads.N)
    averaging = AveragingOperator(T=gt.loads.T, interval=cfg.meter_interval, offsets=offsets)
    clean = averaging.apply(gt.loads.X)
    gamma = clean + uniform_noise(clean, cfg.smart_meter_accuracy, rng)
    return gamma, averaging


def feeder_readings(
    X: np.ndarray, adm: AdmittanceModel, sensors: Sequence[SensorPlacement]
) -> np.ndarray:
    """Noiseless sensor readings from the nonlinear power flow, one column per minute.

    Raises:
        PowerFlowDivergence: a time step does not converge; ``time_step`` and
            ``loading`` name where and at which multiplier contraction failed.
    """
    T = X.shape[1]
    readings = np.zeros((SENSOR_ROWS * len(sensors), T))
    for t in range(T):
        inj = InjectionVector.from_demand(adm, X[:, t])
        try:
            profile = solve_fixed_point(adm, inj)
        except PowerFlowDivergence as e:
            loading = feasibility_envelope(adm, inj)
            raise PowerFlowDivergence(
                f"power flow diverged at minute {t} (contraction holds up to "
                f"{loading:.3f} x this loading)",
                residual=e.residual,
                iterations=e.iterations,
                loading=loading,
                time_step=t,
            ) from e
        readings[:, t] = feeder_quantities(adm, None, profile, sensors)
    return readings


def sample_feeder_sensors(
    gt: GroundTruth,
    adm: AdmittanceModel,
    sensors: Sequence[SensorPlacement],
    cfg: ScenarioConfig,
) -> np.ndarray:
    """Feeder readings Z (6 rows per sensor x T) with D-PMU noise."""
    clean = feeder_readings(gt.loads.X, adm, sensors)
    rng = scenario_rng(cfg.seed, 11)
    return clean + uniform_noise(clean, cfg.dpmu_accuracy, rng)


def calibrate_bounds(
    gamma: np.ndarray, Z: Optional[np.ndarray], cfg: ScenarioConfig
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Entrywise error bounds: metering accuracy for Gamma, a fixed fraction for Z.

    Noise is drawn relative to the clean reading, so a bound computed from
    the noisy value is widened by 1 / (1 - accuracy) to still cover it.
    """
    gamma_bounds = np.maximum(
        cfg.smart_meter_accuracy * np.abs(gamma) / (1.0 - cfg.smart_meter_accuracy),
        cfg.bound_floor,
    )
    z_bounds = None
    if Z is not None:
        z_bounds = np.maximum(
            cfg.feeder_bound_fraction * np.abs(Z) / (1.0 - cfg.dpmu_accuracy), cfg.bound_floor
        )
    return gamma_bounds, z_bounds


def measurement_operator(
    adm: AdmittanceModel,
    sensors: Sequence[SensorPlacement],
    gamma: np.ndarray,
    cfg: ScenarioConfig,
) -> FeederOperator:
    """Linear feeder operator for recovery, built from smart-meter data only.

    ``zero-load`` linearizes at w, ``average`` at the power flow of the mean
    metered demand, ``refresh`` re-linearizes for every meter window.
    """
    lin = linearize(adm, None, sensors)
    T = gamma.shape[1] * cfg.meter_interval
    if cfg.operating_point == "zero-load":
        return FeederOperator.fixed(lin.H, T)
    if cfg.operating_point == "average":
        return FeederOperator.fixed(refresh_operating_point(lin, gamma.mean(axis=1)).H, T)
    blocks = [refresh_operating_point(lin, gamma[:, k]).H for k in range(gamma.shape[1])]
    logger.debug(f"refreshed the measurement operator for {len(blocks)} meter windows")
    return FeederOperator.piecewise(blocks, T, cfg.meter_interval)


def synthesize(
    desc: FeederDescription,
    adm: AdmittanceModel,
    gt: GroundTruth,
    cfg: ScenarioConfig,
) -> MeasurementSet:
    """Smart-meter and feeder measurements of a ground truth, with bounds and operators."""
    if gt.loads.N != adm.n_loads:
        raise ConfigError(
            f"scenario has {gt.loads.N} houses but feeder '{desc.name}' has {adm.n_loads} loads"
        )
    gamma, averaging = sample_smart_meters(gt, cfg)
    sensors = select_sensors(desc.sensors, cfg.kappa)
    Z = feeder = None
    if sensors:
        Z = sample_feeder_sensors(gt, adm, sensors, cfg)
        feeder = measurement_operator(adm, sensors, gamma, cfg)
    gamma_bounds, z_bounds = calibrate_bounds(gamma, Z, cfg)
    logger.info(
        f"sampled {gamma.shape[1]} meter windows and {len(sensors)} feeder sensors "
        f"({cfg.operating_point} operating point)"
    )
    return MeasurementSet(
        gamma=gamma,
        averaging=averaging,
        gamma_bounds=gamma_bounds,
        Z=Z,
        feeder=feeder,
        z_bounds=z_bounds,
        sensor_channels=sensor_channels(sensors),
    )
