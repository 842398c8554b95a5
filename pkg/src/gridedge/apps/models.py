from dataclasses import field
from typing import List, Tuple

import numpy as np

from gridedge.utils.json import JSONSerializableBase


START = "start"
END = "end"


class DetectedEvent(JSONSerializableBase):
    """A change of at least the detection threshold at ``house`` (1-based), minute ``time``."""

    house: int
    time: int
    magnitude: float
    polarity: str

    def as_row(self) -> dict:
        return {
            "house": self.house,
            "time": self.time,
            "magnitude": self.magnitude,
            "polarity": self.polarity,
        }


class RocPoint(JSONSerializableBase):
    threshold: float
    tpr: float
    fpr: float
    detections: int


class RocCurve(JSONSerializableBase):
    tolerance: int
    points: List[RocPoint] = field(default_factory=list)

    def as_rows(self) -> List[dict]:
        return [
            {
                "threshold": p.threshold,
                "tpr": p.tpr,
                "fpr": p.fpr,
                "detections": p.detections,
            }
            for p in self.points
        ]

    @property
    def max_tpr(self) -> float:
        return max((p.tpr for p in self.points), default=0.0)

    def operating_point(self, max_fpr: float) -> Tuple[float, float, float]:
        """(threshold, TPR, FPR) with the best TPR among points with FPR <= max_fpr."""
        admissible = [p for p in self.points if p.fpr <= max_fpr]
        if not admissible:
            return (float("nan"), 0.0, float("nan"))
        best = max(admissible, key=lambda p: (p.tpr, -p.fpr))
        return (best.threshold, best.tpr, best.fpr)


class SolarPattern(JSONSerializableBase):
    """Unit-norm generation pattern, positive over daylight."""

    rho: np.ndarray
    source: str = "recovered"

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)


class DisaggregationFit(JSONSerializableBase):
    """Feeder-level split of a head active-power series.

    ``component`` is alpha + beta * rho in the demand convention (negative
    when generating) and ``generation`` its nonnegative generation part.
    """

    alpha: float
    beta: float
    d: np.ndarray
    component: np.ndarray
    generation: np.ndarray
    phase: str = "total"
