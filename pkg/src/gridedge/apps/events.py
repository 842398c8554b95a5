import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from gridedge.apps.models import END, START, DetectedEvent, RocCurve, RocPoint
from gridedge.shared.exceptions import BadParameter
from gridedge.synth.models import GroundTruth


logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = tuple(round(0.05 * k, 2) for k in range(1, 31))


def detect_ev_events(
    Dp: np.ndarray,
    ev_rating: float,
    threshold_fraction: float,
    min_gap: int = 0,
) -> List[DetectedEvent]:
    """Threshold the recovered active-power changes.

    Column 0 carries the initial load level and is never a detection. Same
    polarity detections at one house closer than ``min_gap`` minutes are
    merged, keeping the largest magnitude.
    """
    if threshold_fraction <= 0:
        raise BadParameter(f"threshold fraction must be positive, got {threshold_fraction}")
    if ev_rating <= 0:
        raise BadParameter(f"EV rating must be positive, got {ev_rating}")
    Dp = np.atleast_2d(np.asarray(Dp, dtype=float))
    threshold = threshold_fraction * ev_rating
    rows, cols = np.nonzero(np.abs(Dp[:, 1:]) >= threshold)

    events: List[DetectedEvent] = []
    for row, col in sorted(zip(rows.tolist(), (cols + 1).tolist())):
        magnitude = float(Dp[row, col])
        polarity = START if magnitude > 0 else END
        last = events[-1] if events else None
        if (
            last is not None
            and last.house == row + 1
            and last.polarity == polarity
            and col - last.time <= min_gap
        ):
            if abs(magnitude) > abs(last.magnitude):
                events[-1] = DetectedEvent(row + 1, col, magnitude, polarity)
            continue
        events.append(DetectedEvent(row + 1, col, magnitude, polarity))
    return events


def score_detections(
    events: Sequence[DetectedEvent],
    truth: Sequence[DetectedEvent],
    tolerance: int = 1,
    *,
    opportunities: int,
) -> Tuple[float, float]:
    """(TPR, FPR) of a detection set.

    A truth event is matched by at most one detection at the same house
    within ``tolerance`` minutes, greedily in time order. FPR divides the
    unmatched detections by ``opportunities`` (non-event house-minutes).
    """
    if tolerance < 0:
        raise BadParameter(f"tolerance must be nonnegative, got {tolerance}")
    unmatched = list(range(len(events)))
    matched = 0
    for target in sorted(truth, key=lambda e: (e.time, e.house)):
        candidates = [
            i for i in unmatched
            if events[i].house == target.house and abs(events[i].time - target.time) <= tolerance
        ]
        if not candidates:
            continue
        best = min(candidates, key=lambda i: (abs(events[i].time - target.time), i))
        unmatched.remove(best)
        matched += 1
    tpr = matched / len(truth) if truth else 0.0
    fpr = len(unmatched) / opportunities if opportunities > 0 else 0.0
    return tpr, min(fpr, 1.0)


def detection_opportunities(n_houses: int, horizon: int, n_truth: int) -> int:
    """Non-event house-minutes, excluding the initial column."""
    return max(n_houses * (horizon - 1) - n_truth, 1)


def roc_sweep(
    Dp: np.ndarray,
    truth: Sequence[DetectedEvent],
    ev_rating: float,
    fractions: Optional[Iterable[float]] = None,
    tolerance: int = 1,
    min_gap: int = 0,
) -> RocCurve:
    Dp = np.atleast_2d(Dp)
    fractions = sorted(DEFAULT_FRACTIONS if fractions is None else fractions)
    opportunities = detection_opportunities(Dp.shape[0], Dp.shape[1], len(truth))
    curve = RocCurve(tolerance=tolerance)
    for fraction in fractions:
        events = detect_ev_events(Dp, ev_rating, fraction, min_gap)
        tpr, fpr = score_detections(events, truth, tolerance, opportunities=opportunities)
        curve.points.append(RocPoint(float(fraction), tpr, fpr, len(events)))
    logger.debug(f"ROC over {len(fractions)} thresholds, max TPR {curve.max_tpr:.3f}")
    return curve


def truth_ev_events(gt: GroundTruth) -> List[DetectedEvent]:
    """Start and end instants of the EV sessions that fall inside the horizon."""
    T = gt.loads.T
    instants = []
    for event in gt.ev_events:
        if 1 <= event.start < T:
            instants.append(DetectedEvent(event.house, event.start, event.dP, START))
        if event.end < T:
            instants.append(DetectedEvent(event.house, event.end, -event.dP, END))
    return sorted(instants, key=lambda e: (e.house, e.time))
