from .models import (
    CONVERGED,
    NOT_CONVERGED,
    RecoveryProblem,
    RecoverySolution,
    SolverDiagnostics,
    SolverOptions,
)
from .operators import AveragingOperator, DifferenceOperator, FeederOperator
from .prox import (
    group_l1_norm,
    nuclear_norm,
    project_box,
    prox_group_l1,
    prox_nuclear,
    prox_ridge,
)
from .solver import (
    RecoverySolver,
    default_lambda,
    lambda_path,
    solve_full,
    solve_rank_one,
)
