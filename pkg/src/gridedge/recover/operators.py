"""Functional linear operators acting on channel-by-time matrices.

Matrices are laid out with one row per channel and one column per minute,
and every operator acts on the right, as in ``X @ U`` or ``X @ A``.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gridedge.shared.exceptions import BadParameter, ConfigError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DifferenceOperator:
    """Cumulative-sum operator U (T x T upper-triangular ones) and its inverse."""

    T: int

    def __post_init__(self):
        if self.T < 1:
            raise BadParameter(f"horizon must be positive, got {self.T}")

    def apply(self, D: np.ndarray) -> np.ndarray:
        """D @ U: running sum along time."""
        return np.cumsum(D, axis=-1)

    def inverse(self, X: np.ndarray) -> np.ndarray:
        """X @ U^-1: first differences, the first column keeps the initial level."""
        return np.diff(X, axis=-1, prepend=0.0)

    def adjoint(self, Y: np.ndarray) -> np.ndarray:
        """Y @ U^T: reverse running sum along time."""
        return np.flip(np.cumsum(np.flip(Y, axis=-1), axis=-1), axis=-1)

    def inverse_adjoint(self, Y: np.ndarray) -> np.ndarray:
        """Y @ U^-T."""
        return -np.diff(Y, axis=-1, append=0.0)

    def matrix(self) -> np.ndarray:
        return np.triu(np.ones((self.T, self.T)))


@dataclass(frozen=True)
class AveragingOperator:
    """Smart-meter window averaging, synchronous or with per-node offsets.

    Window ``k`` of a node with offset ``o`` covers minutes
    ``[k*interval - o, (k+1)*interval - o)`` clipped to the horizon and is
    averaged over the minutes it actually covers. ``offsets`` holds one
    entry per node; rows of a stacked [P; Q] matrix reuse the node offsets.
    """

    T: int
    interval: int
    offsets: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.interval < 1:
            raise BadParameter(f"meter interval must be positive, got {self.interval}")
        if self.T % self.interval:
            raise ConfigError(
                f"meter interval {self.interval} does not divide the horizon {self.T}"
            )
        if self.offsets is not None:
            offsets = np.asarray(self.offsets, dtype=int)
            if np.any(offsets < 0) or np.any(offsets >= self.interval):
                raise ConfigError(f"meter offsets must lie in [0, {self.interval})")
            object.__setattr__(self, "offsets", offsets)

    @property
    def T_s(self) -> int:
        return self.T // self.interval

    @property
    def synchronous(self) -> bool:
        return self.offsets is None or not np.any(self.offsets)

    def _row_offsets(self, n_rows: int) -> np.ndarray:
        if self.offsets is None:
            return np.zeros(n_rows, dtype=int)
        n = len(self.offsets)
        if n == n_rows:
            return self.offsets
        if 2 * n == n_rows:
            return np.concatenate([self.offsets, self.offsets])
        raise BadParameter(f"{n_rows} rows do not match {n} meter offsets")

    def boundaries(self, n_rows: int) -> np.ndarray:
        """Window edges per row, shape (n_rows, T_s + 1)."""
        starts = self.interval * np.arange(self.T_s + 1)
        edges = starts[None, :] - self._row_offsets(n_rows)[:, None]
        return np.clip(edges, 0, self.T)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        edges = self.boundaries(X.shape[0])
        running = np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(X, axis=1)], axis=1)
        totals = np.diff(np.take_along_axis(running, edges, axis=1), axis=1)
        return totals / np.diff(edges, axis=1)

    def adjoint(self, Y: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(Y)
        n_rows = Y.shape[0]
        edges = self.boundaries(n_rows)
        weights = Y / np.diff(edges, axis=1)
        steps = np.zeros((n_rows, self.T + 1))
        rows = np.repeat(np.arange(n_rows)[:, None], self.T_s, axis=1)
        np.add.at(steps, (rows, edges[:, :-1]), weights)
        np.add.at(steps, (rows, edges[:, 1:]), -weights)
        return np.cumsum(steps, axis=1)[:, : self.T]

    def matrix(self, node: int = 0) -> np.ndarray:
        """Dense T x T_s averaging matrix of one node."""
        offset = 0 if self.offsets is None else int(self.offsets[node])
        edges = np.clip(self.interval * np.arange(self.T_s + 1) - offset, 0, self.T)
        A = np.zeros((self.T, self.T_s))
        for k in range(self.T_s):
            A[edges[k] : edges[k + 1], k] = 1.0 / (edges[k + 1] - edges[k])
        return A


@dataclass(frozen=True)
class FeederOperator:
    """Piecewise-constant feeder measurement operator.

    ``segments`` holds ``(start, stop, H)`` triples covering the horizon in
    order; minute ``t`` in ``[start, stop)`` is measured as ``H @ x_t``.
    """

    T: int
    segments: Tuple[Tuple[int, int, np.ndarray], ...] = field(default=())

    def __post_init__(self):
        cursor = 0
        rows = None
        for start, stop, H in self.segments:
            if start != cursor or stop <= start:
                raise BadParameter(f"segment [{start}, {stop}) does not continue at {cursor}")
            if rows is not None and H.shape[0] != rows:
                raise BadParameter("all segments must have the same number of rows")
            rows = H.shape[0]
            cursor = stop
        if self.segments and cursor != self.T:
            raise BadParameter(f"segments end at {cursor}, horizon is {self.T}")

    @classmethod
    def fixed(cls, H: np.ndarray, T: int) -> "FeederOperator":
        return cls(T=T, segments=((0, T, np.asarray(H, dtype=float)),))

    @classmethod
    def piecewise(cls, blocks: Sequence[np.ndarray], T: int, interval: int) -> "FeederOperator":
        """One block per ``interval`` minutes, in order."""
        segments: List[Tuple[int, int, np.ndarray]] = []
        for k, H in enumerate(blocks):
            segments.append((k * interval, min((k + 1) * interval, T), np.asarray(H, dtype=float)))
        return cls(T=T, segments=tuple(segments))

    @property
    def n_rows(self) -> int:
        return self.segments[0][2].shape[0] if self.segments else 0

    @property
    def n_cols(self) -> int:
        return self.segments[0][2].shape[1] if self.segments else 0

    @property
    def time_varying(self) -> bool:
        return len(self.segments) > 1

    def apply(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_rows, X.shape[1]))
        for start, stop, H in self.segments:
            out[:, start:stop] = H @ X[:, start:stop]
        return out

    def adjoint(self, R: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_cols, R.shape[1]))
        for start, stop, H in self.segments:
            out[:, start:stop] = H.T @ R[:, start:stop]
        return out


def estimate_frobenius(apply, shape: Tuple[int, ...], samples: int = 16, seed: int = 0) -> float:
    """Frobenius norm from random sign vectors, E||A r||^2 = ||A||_F^2."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(samples):
        r = rng.choice((-1.0, 1.0), size=shape)
        total += float(np.sum(apply(r) ** 2))
    return float(np.sqrt(total / samples))
