import logging
from typing import List, Optional, Sequence, Tuple, Union

import cvxpy as cp
import numpy as np
from scipy import fft

from gridedge.apps.models import DisaggregationFit, SolarPattern
from gridedge.recover.models import RecoverySolution
from gridedge.recover.solver import default_lambda
from gridedge.shared.constants import MINUTES_PER_DAY, PHASES
from gridedge.shared.exceptions import (
    BadParameter,
    DegenerateFitError,
    DegeneratePatternError,
    NumericalError,
)


logger = logging.getLogger(__name__)

DEFAULT_NIGHT_WEIGHT = 10.0


def daylight_mask(T: int, start_minute: int = 0, sunrise: int = 360, sunset: int = 1080) -> np.ndarray:
    minute = (start_minute + np.arange(T)) % MINUTES_PER_DAY
    return (minute > sunrise) & (minute < sunset)


def correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; 0 when either series is constant."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    a, b = a - a.mean(), b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else 0.0


def rms_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(estimate) - np.asarray(truth)) ** 2)))


def pattern_from_series(series: np.ndarray, daytime: Optional[np.ndarray] = None) -> SolarPattern:
    """Normalize to unit norm and fix the sign so the daytime sum is positive."""
    series = np.asarray(series, dtype=float)
    norm = np.linalg.norm(series)
    if norm == 0:
        raise DegeneratePatternError("pattern is identically zero")
    rho = series / norm
    window = rho if daytime is None else rho[np.asarray(daytime, dtype=bool)]
    if window.sum() < 0:
        rho = -rho
    return SolarPattern(rho=rho)


def extract_pattern(
    solution: RecoverySolution, daytime: Optional[np.ndarray] = None
) -> SolarPattern:
    """Temporal pattern of the recovered low-rank component.

    Rank-one solutions use v directly; full solutions use the first right
    singular vector of K. Either is accumulated over time before
    normalization.

    Raises:
        DegeneratePatternError: the low-rank component is numerically zero.
    """
    if solution.v is not None:
        base = np.asarray(solution.v, dtype=float)
        if not np.any(base):
            raise DegeneratePatternError("recovered temporal factor v is zero")
    else:
        _, sigma, right = np.linalg.svd(solution.K, full_matrices=False)
        reference = max(1.0, float(np.abs(solution.P).max(initial=0.0)))
        if sigma.size == 0 or sigma[0] <= 1e-12 * reference:
            raise DegeneratePatternError("recovered low-rank component is zero")
        base = right[0]
    return pattern_from_series(np.cumsum(base), daytime)


def bandpass_remove(
    pattern: Union[SolarPattern, np.ndarray],
    period_range: Tuple[float, float] = (10.0, 35.0),
    renormalize: bool = True,
) -> SolarPattern:
    """Zero the Fourier bins whose period (minutes) lies inside ``period_range``.

    Raises:
        DegeneratePatternError: nothing is left to renormalize.
    """
    rho = pattern.rho if isinstance(pattern, SolarPattern) else np.asarray(pattern, dtype=float)
    T = rho.shape[0]
    low, high = period_range
    if not 0 < low < high < T:
        raise BadParameter(f"period range must satisfy 0 < low < high < T, got {period_range}")
    spectrum = fft.rfft(rho)
    freqs = fft.rfftfreq(T, d=1.0)
    with np.errstate(divide="ignore"):
        periods = np.where(freqs > 0, 1.0 / freqs, np.inf)
    spectrum[(periods >= low) & (periods <= high)] = 0.0
    filtered = fft.irfft(spectrum, n=T)
    if renormalize:
        norm = np.linalg.norm(filtered)
        if norm <= 1e-12 * max(np.linalg.norm(rho), 1e-300):
            raise DegeneratePatternError("pattern vanishes under band-pass filtering")
        filtered = filtered / norm
    return SolarPattern(rho=filtered, source="filtered")


def disaggregate_btm(
    z: np.ndarray,
    rho: Union[SolarPattern, np.ndarray],
    night_mask: np.ndarray,
    mu: Optional[float] = None,
    night_weight: float = DEFAULT_NIGHT_WEIGHT,
    phase: str = "total",
) -> DisaggregationFit:
    """Split a head active-power series into alpha + beta*rho plus sparse changes.

    Minimizes ``||z - alpha - beta*rho - cumsum(d)||^2 + mu*||d[1:]||_1`` with the
    solar term pulled to zero on ``night_mask``; d[0] carries the initial level.

    Raises:
        DegenerateFitError: rho is constant over the daytime minutes.
    """
    z = np.asarray(z, dtype=float)
    rho = rho.rho if isinstance(rho, SolarPattern) else np.asarray(rho, dtype=float)
    night = np.asarray(night_mask, dtype=bool)
    T = z.shape[0]
    if rho.shape != (T,) or night.shape != (T,):
        raise BadParameter(f"series lengths differ: z {z.shape}, rho {rho.shape}, mask {night.shape}")
    if not night.any():
        raise BadParameter("night mask selects no minutes")
    day = rho[~night]
    if day.size < 2 or np.ptp(day) <= 1e-9 * max(np.abs(rho).max(), 1e-300):
        raise DegenerateFitError("solar pattern is constant over daytime")

    scale = float(np.abs(z).max())
    scale = scale if scale > 0 else 1.0
    mu = default_lambda(T) if mu is None else mu

    alpha = cp.Variable()
    beta = cp.Variable()
    d = cp.Variable(T)
    solar = alpha + beta * rho
    objective = (
        cp.sum_squares(z / scale - solar - cp.cumsum(d))
        + mu * cp.norm1(d[1:])
        + night_weight * cp.sum_squares(solar[np.flatnonzero(night)])
    )
    problem = cp.Problem(cp.Minimize(objective))
    try:
        problem.solve()
    except cp.SolverError as e:
        raise NumericalError(f"disaggregation fit failed: {e}") from e
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise NumericalError(f"disaggregation fit ended with status {problem.status}")

    a, b = float(alpha.value) * scale, float(beta.value) * scale
    component = a + b * rho
    logger.debug(f"BTM fit [{phase}]: alpha={a:.3f} W, beta={b:.3f} W ({problem.status})")
    return DisaggregationFit(
        alpha=a,
        beta=b,
        d=np.asarray(d.value) * scale,
        component=component,
        generation=np.maximum(-component, 0.0),
        phase=phase,
    )


def disaggregate_feeder(
    head_p: np.ndarray,
    rho: Union[SolarPattern, np.ndarray],
    night_mask: np.ndarray,
    mu: Optional[float] = None,
    night_weight: float = DEFAULT_NIGHT_WEIGHT,
    phases: Sequence[str] = PHASES,
) -> Tuple[List[DisaggregationFit], np.ndarray]:
    """Per-phase BTM fits of the feeder-head active power and the total generation."""
    head_p = np.atleast_2d(head_p)
    fits = [
        disaggregate_btm(row, rho, night_mask, mu, night_weight, phase)
        for row, phase in zip(head_p, phases)
    ]
    total = np.sum([fit.generation for fit in fits], axis=0)
    return fits, total
