import logging
from typing import List, Optional, Tuple

import numpy as np

from gridedge.shared.constants import MINUTES_PER_DAY
from gridedge.shared.exceptions import GenerationError
from gridedge.synth.models import (
    APPLIANCE,
    EV,
    GroundTruth,
    LoadMatrix,
    PVConfig,
    ScenarioConfig,
    TruthEvent,
)


logger = logging.getLogger(__name__)

PLACEMENT_ATTEMPTS = 50


def scenario_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator per synthesis stage, so stages stay reproducible on their own."""
    return np.random.default_rng([seed, stream])


def reactive_ratio(power_factor):
    """Q/P for a lagging power factor."""
    return np.tan(np.arccos(power_factor))


def add_event(P: np.ndarray, Q: np.ndarray, event: TruthEvent) -> None:
    """Add a rectangular change to row ``event.house`` in place."""
    row = event.house - 1
    P[row, event.start : event.end] += event.dP
    Q[row, event.start : event.end] += event.dQ


def solar_pattern(
    T: int,
    start_minute: int,
    pv: PVConfig,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Shared generation pattern in [0, 1] with unit peak (zero if the horizon is dark).

    ``smooth`` is a raised cosine between sunrise and sunset; ``variable``
    multiplies it by a clipped bounded random walk of cloud cover.
    """
    minute = (start_minute + np.arange(T)) % MINUTES_PER_DAY
    daylight = pv.sunset - pv.sunrise
    phase = (minute - pv.sunrise) / daylight
    pattern = np.where(
        (minute >= pv.sunrise) & (minute <= pv.sunset),
        0.5 * (1.0 - np.cos(2.0 * np.pi * phase)),
        0.0,
    )
    if pv.pattern == "variable":
        rng = rng or np.random.default_rng(0)
        steps = rng.standard_normal(T) * pv.cloud_volatility
        cloud = np.empty(T)
        level = 1.0
        for t in range(T):
            level = min(max(level + steps[t], pv.cloud_floor), 1.0)
            cloud[t] = level
        pattern = pattern * cloud
    peak = pattern.max(initial=0.0)
    return pattern / peak if peak > 0 else pattern


def _place(
    occupancy: np.ndarray,
    rng: np.random.Generator,
    window: Tuple[int, int],
    duration: Tuple[int, int],
    limit: int,
    T: int,
) -> Tuple[int, int]:
    for _ in range(PLACEMENT_ATTEMPTS):
        start = int(rng.integers(window[0], window[1]))
        end = min(start + int(rng.integers(duration[0], duration[1] + 1)), T)
        if np.all(occupancy[start:end] < limit):
            occupancy[start:end] += 1
            return start, end
    raise GenerationError(
        f"cannot place an event in [{window[0]}, {window[1]}) without exceeding "
        f"{limit} overlapping events"
    )


def _pv_capacities(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    N = cfg.n_houses
    if isinstance(cfg.pv.capacity, list):
        return np.asarray(cfg.pv.capacity, dtype=float)
    capacities = np.zeros(N)
    owners = rng.choice(N, size=int(round(cfg.pv.fraction * N)), replace=False)
    spread = 1.0 + cfg.pv.capacity_spread * rng.uniform(-1.0, 1.0, len(owners))
    capacities[owners] = cfg.pv.capacity * spread
    return capacities


def generate_ground_truth(cfg: ScenarioConfig) -> GroundTruth:
    """Synthesize the spatio-temporal load matrix of a scenario.

    Each house draws a constant base load and power factor, then gets
    rectangular appliance pulses and EV charging sessions (synchronized P
    and Q changes), the shared PV pattern scaled by its capacity (P only
    unless ``pv.reactive_ratio`` is set) and, optionally, an HVAC square
    wave whose period is common to the feeder.

    Raises:
        GenerationError: an event cannot be placed within the overlap limit.
    """
    N, T = cfg.n_houses, cfg.horizon
    base_rng = scenario_rng(cfg.seed, 0)
    base = base_rng.uniform(*cfg.base_load, N)
    power_factor = base_rng.uniform(*cfg.power_factor, N)
    P = np.repeat(base[:, None], T, axis=1)
    Q = np.repeat((base * reactive_ratio(power_factor))[:, None], T, axis=1)

    events: List[TruthEvent] = []
    occupancy = np.zeros((N, T), dtype=int)

    appliance_rng = scenario_rng(cfg.seed, 1)
    expected = cfg.appliances.rate * T / MINUTES_PER_DAY
    for row in range(N):
        for _ in range(int(appliance_rng.poisson(expected))):
            start, end = _place(
                occupancy[row], appliance_rng, (1, T), cfg.appliances.duration,
                cfg.appliances.max_overlap, T,
            )
            dP = float(appliance_rng.uniform(*cfg.appliances.rating))
            dQ = dP * float(reactive_ratio(appliance_rng.uniform(*cfg.power_factor)))
            events.append(TruthEvent(row + 1, start, end, dP, dQ, APPLIANCE))

    ev_rng = scenario_rng(cfg.seed, 2)
    charging = np.zeros((N, T), dtype=int)
    if cfg.ev.sessions:
        window = cfg.ev.window or (1, T)
        houses = ev_rng.choice(N, size=cfg.ev.sessions, replace=cfg.ev.sessions > N)
        for row in houses:
            start, end = _place(
                charging[row], ev_rng, window, cfg.ev.duration, 1, T,
            )
            dQ = cfg.ev.rating * float(reactive_ratio(cfg.ev.power_factor))
            events.append(TruthEvent(int(row) + 1, start, end, cfg.ev.rating, dQ, EV))

    events.sort(key=lambda event: (event.start, event.house, event.kind))
    for event in events:
        add_event(P, Q, event)

    pv_rng = scenario_rng(cfg.seed, 3)
    capacities = _pv_capacities(cfg, pv_rng)
    pattern = solar_pattern(T, cfg.start_minute, cfg.pv, pv_rng)
    pv = -np.outer(capacities, pattern)
    P += pv
    Q += cfg.pv.reactive_ratio * pv

    hvac = None
    if cfg.hvac.enabled:
        hvac_rng = scenario_rng(cfg.seed, 4)
        period = int(hvac_rng.integers(cfg.hvac.period[0], cfg.hvac.period[1] + 1))
        owners = hvac_rng.random(N) < cfg.hvac.fraction
        shifts = hvac_rng.integers(0, period, N)
        t = np.arange(T)
        wave = (((t[None, :] + shifts[:, None]) % period) < cfg.hvac.duty * period).astype(float)
        hvac = cfg.hvac.magnitude * wave * owners[:, None]
        P += hvac
        Q += hvac * reactive_ratio(power_factor)[:, None]
        logger.debug(f"HVAC period {period} min on {int(owners.sum())} houses")

    logger.info(
        f"generated ground truth: {N} houses x {T} min, {len(events)} events "
        f"({sum(e.kind == EV for e in events)} EV), {int(np.count_nonzero(capacities))} PV"
    )
    return GroundTruth(
        loads=LoadMatrix(P=P, Q=Q),
        pv=pv,
        pattern=pattern,
        capacities=capacities,
        events=events,
        hvac=hvac,
        start_minute=cfg.start_minute,
    )
