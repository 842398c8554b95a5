from dataclasses import dataclass, field
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gridedge.recover.operators import AveragingOperator, DifferenceOperator, FeederOperator
from gridedge.shared.exceptions import BadParameter
from gridedge.utils.json import JSONSerializableBase


CONVERGED = "converged"
NOT_CONVERGED = "not_converged"

SolverMode = Literal["full", "rank1"]


class SolverOptions(BaseModel):
    """ADMM settings shared by both recovery solvers."""

    model_config = ConfigDict(extra="forbid")

    rho: float = Field(default=1.0, gt=0, description="initial ADMM penalty")
    relaxation: float = Field(
        default=1.6, gt=0, lt=2, description="over-relaxation of the copy updates"
    )
    adaptive_rho: bool = True
    adapt_every: int = Field(default=5, ge=1)
    balance_ratio: float = Field(default=10.0, gt=1)
    balance_factor: float = Field(default=2.0, gt=1)
    tol: float = Field(default=1e-4, gt=0, description="relative primal/dual tolerance")
    abs_tol: float = Field(default=1e-9, ge=0)
    max_iter: int = Field(default=2000, ge=1)
    cg_tol: float = Field(default=1e-8, gt=0)
    cg_max_iter: int = Field(default=500, ge=1)
    truncation: float = Field(
        default=1e-6, ge=0, description="groups below this fraction of the largest are zeroed"
    )
    polish: bool = Field(
        default=True, description="least-squares refit of the measurements on the recovered support"
    )
    polish_rank_tol: float = Field(default=1e-2, gt=0, lt=1)
    polish_tol: float = Field(default=1e-10, gt=0)
    polish_max_iter: int = Field(default=5000, ge=1)
    feasibility_slack: float = Field(default=1.05, ge=1)
    normalize: bool = True
    log_every: int = Field(default=100, ge=1)


@dataclass(frozen=True)
class RecoveryProblem:
    """Measurements, operators and bounds of one recovery instance.

    ``gamma`` stacks smart-meter windows as [P; Q] (2N x T_s) and ``Z`` the
    feeder readings (m x T). Either block may be absent, not both. When
    ``capacities`` is set the rank-one solver may be used; ``pv_reactive_ratio``
    adds the same low-rank term, scaled, to the Q block.
    """

    difference: DifferenceOperator
    lam: float
    gamma: Optional[np.ndarray] = None
    averaging: Optional[AveragingOperator] = None
    gamma_bounds: Optional[np.ndarray] = None
    Z: Optional[np.ndarray] = None
    feeder: Optional[FeederOperator] = None
    z_bounds: Optional[np.ndarray] = None
    n_loads: int = 0
    capacities: Optional[np.ndarray] = None
    pv_reactive_ratio: float = 0.0
    nonnegative_q: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise BadParameter(f"sparsity coefficient must be positive, got {self.lam}")
        if self.gamma is None and self.Z is None:
            raise BadParameter("a recovery problem needs smart-meter or feeder data")
        T = self.difference.T
        n = self.n_loads
        if n < 1:
            raise BadParameter("number of load nodes must be positive")
        if self.gamma is not None:
            if self.averaging is None or self.gamma_bounds is None:
                raise BadParameter("smart-meter data needs an averaging operator and bounds")
            if self.averaging.T != T:
                raise BadParameter(f"averaging horizon {self.averaging.T} differs from {T}")
            expected = (2 * n, self.averaging.T_s)
            self._check_block("gamma", self.gamma, self.gamma_bounds, expected)
        if self.Z is not None:
            if self.feeder is None or self.z_bounds is None:
                raise BadParameter("feeder data needs a measurement operator and bounds")
            if self.feeder.T != T or self.feeder.n_cols != 2 * n:
                raise BadParameter(
                    f"feeder operator maps {self.feeder.n_cols} loads over {self.feeder.T} "
                    f"minutes, expected {2 * n} over {T}"
                )
            self._check_block("Z", self.Z, self.z_bounds, (self.feeder.n_rows, T))
        if self.capacities is not None and np.shape(self.capacities) != (n,):
            raise BadParameter(f"capacities must have length {n}")

    @staticmethod
    def _check_block(name, data, bounds, expected):
        if np.shape(data) != expected:
            raise BadParameter(f"{name} has shape {np.shape(data)}, expected {expected}")
        if np.shape(bounds) != expected:
            raise BadParameter(f"{name} bounds have shape {np.shape(bounds)}, expected {expected}")
        if not np.all(np.asarray(bounds) > 0):
            raise BadParameter(f"{name} bounds must be strictly positive")

    @property
    def T(self) -> int:
        return self.difference.T

    @property
    def N(self) -> int:
        return self.n_loads

    def reconstruct(self, K: np.ndarray, Dp: np.ndarray, Dq: np.ndarray) -> np.ndarray:
        """Stacked demand [(K + Dp) U; (gamma K + Dq) U]."""
        U = self.difference
        return np.vstack([U.apply(K + Dp), U.apply(self.pv_reactive_ratio * K + Dq)])


class SolverDiagnostics(JSONSerializableBase):
    solver: str
    status: str
    iterations: int
    lam: float
    rho: float
    primal_residual: float
    dual_residual: float
    objective: float
    feasible: bool
    max_violation: float
    infeasibility_suspected: bool
    cg_iterations: int
    support: int
    polished: bool = False
    primal_trace: List[float] = field(default_factory=list)
    dual_trace: List[float] = field(default_factory=list)
    objective_trace: List[float] = field(default_factory=list)
    violation_trace: List[float] = field(default_factory=list)


@dataclass
class RecoverySolution:
    """Recovered low-rank and sparse-change components.

    ``K`` is always the full N x T low-rank matrix; in rank-one mode it equals
    ``outer(capacities, v)`` and ``v`` is kept alongside.
    """

    mode: str
    K: np.ndarray
    Dp: np.ndarray
    Dq: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    diagnostics: SolverDiagnostics
    v: Optional[np.ndarray] = None
    capacities: Optional[np.ndarray] = None
    wall_time: float = 0.0

    @property
    def X(self) -> np.ndarray:
        return np.vstack([self.P, self.Q])

    @property
    def status(self) -> str:
        return self.diagnostics.status

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def support(self) -> int:
        return int(np.count_nonzero(np.hypot(self.Dp, self.Dq)))
