import abc
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, lsqr

from gridedge.recover.models import (
    CONVERGED,
    NOT_CONVERGED,
    RecoveryProblem,
    RecoverySolution,
    SolverDiagnostics,
    SolverOptions,
)
from gridedge.recover.operators import estimate_frobenius
from gridedge.recover.prox import (
    group_l1_norm,
    group_norms,
    nuclear_norm,
    prox_group_l1,
    prox_nuclear,
    prox_ridge,
    project_box,
)
from gridedge.shared.constants import LAMBDA_REFERENCE, LAMBDA_REFERENCE_HORIZON
from gridedge.shared.exceptions import BadParameter


logger = logging.getLogger(__name__)


def default_lambda(T: int) -> float:
    """Sparsity coefficient scaled as 1/sqrt(T), equal to 0.05 for one day of minutes."""
    if T <= 0:
        raise BadParameter(f"horizon must be positive, got {T}")
    return LAMBDA_REFERENCE * float(np.sqrt(LAMBDA_REFERENCE_HORIZON / T))


def lambda_path(lam: float, factors: Sequence[float] = (0.2, 1.0, 5.0, 25.0)) -> List[float]:
    if lam <= 0:
        raise BadParameter(f"sparsity coefficient must be positive, got {lam}")
    return [lam * factor for factor in sorted(factors)]


@dataclass
class _ConstraintBlock:
    """One linear measurement block G_j with its constraint set.

    ``forward`` maps the stacked demand (P, Q) to the block; ``adjoint``
    maps back. With a ``center`` the set is a box of half-width ``bound``,
    otherwise the nonnegative orthant.
    """

    name: str
    forward: Callable[[np.ndarray, np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]
    shape: Tuple[int, int]
    center: Optional[np.ndarray] = None
    bound: Optional[np.ndarray] = None
    weight: float = 1.0

    def project(self, v: np.ndarray) -> np.ndarray:
        if self.center is None:
            return np.maximum(v, 0.0)
        c = self.weight * self.center
        return c - project_box(c - v, self.weight * self.bound)


def _data_scale(problem: RecoveryProblem) -> float:
    for block in (problem.gamma, problem.Z):
        if block is not None and block.size:
            peak = float(np.max(np.abs(block)))
            if peak > 0:
                return peak
    return 1.0


class RecoverySolver(abc.ABC):
    """ADMM skeleton shared by the low-rank recovery solvers.

    The splitting keeps the decision variables (low-rank part, D^P, D^Q)
    in a least-squares update solved with conjugate gradients, and moves
    the penalties and the measurement boxes onto copies handled by their
    proximal operators. Subclasses define the low-rank parametrization.
    """

    subclasses: Dict[str, Type["RecoverySolver"]] = {}
    mode: str = ""

    @classmethod
    def create(cls, mode: str, **kwargs) -> "RecoverySolver":
        """Factory method to create a solver by mode name."""
        if mode not in cls.subclasses:
            raise BadParameter(f"Unknown solver mode: {mode}")
        return cls.subclasses[mode](**kwargs)

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.mode in RecoverySolver.subclasses:
            logger.fatal(f"recovery solver {cls.mode} exists already.")
        RecoverySolver.subclasses[cls.mode] = cls

    def __init__(self, options: Optional[SolverOptions] = None):
        self.options = options or SolverOptions()

    @abc.abstractmethod
    def _setup(self, problem: RecoveryProblem) -> Tuple[int, ...]:
        """Prepare for ``problem``; returns the shape of the low-rank parameter."""

    @abc.abstractmethod
    def _expand(self, k: np.ndarray) -> np.ndarray:
        """Low-rank parameter to the N x T matrix K."""

    @abc.abstractmethod
    def _expand_adjoint(self, G: np.ndarray) -> np.ndarray:
        pass

    @abc.abstractmethod
    def _prox(self, a: np.ndarray, rho: float) -> np.ndarray:
        pass

    @abc.abstractmethod
    def _penalty(self, k: np.ndarray) -> float:
        pass

    @abc.abstractmethod
    def _finish(self, k: np.ndarray, scale: float) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """K and the optional temporal factor in original units."""

    @abc.abstractmethod
    def _basis(self, k: np.ndarray) -> np.ndarray:
        """N x r column basis of K held fixed during the refit."""

    @abc.abstractmethod
    def _coefficients(self, basis: np.ndarray, k: np.ndarray) -> np.ndarray:
        """r x T coefficients with K = basis @ coefficients."""

    @abc.abstractmethod
    def _compose(self, basis: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
        pass

    def _blocks(self, problem: RecoveryProblem, scale: float) -> List[_ConstraintBlock]:
        N, T = problem.N, problem.T
        blocks = []
        if problem.gamma is not None:
            A = problem.averaging

            def meter_adjoint(R):
                W = A.adjoint(R)
                return W[:N], W[N:]

            blocks.append(
                _ConstraintBlock(
                    name="smart-meter",
                    forward=lambda Xp, Xq: A.apply(np.vstack([Xp, Xq])),
                    adjoint=meter_adjoint,
                    shape=problem.gamma.shape,
                    center=problem.gamma / scale,
                    bound=problem.gamma_bounds / scale,
                )
            )
        if problem.Z is not None:
            F = problem.feeder

            def feeder_adjoint(R):
                W = F.adjoint(R)
                return W[:N], W[N:]

            blocks.append(
                _ConstraintBlock(
                    name="feeder",
                    forward=lambda Xp, Xq: F.apply(np.vstack([Xp, Xq])),
                    adjoint=feeder_adjoint,
                    shape=problem.Z.shape,
                    center=problem.Z / scale,
                    bound=problem.z_bounds / scale,
                )
            )
        if problem.nonnegative_q:
            blocks.append(
                _ConstraintBlock(
                    name="nonnegative-q",
                    forward=lambda Xp, Xq: Xq,
                    adjoint=lambda R: (np.zeros_like(R), R),
                    shape=(N, T),
                )
            )
        return blocks

    def solve(self, problem: RecoveryProblem) -> RecoverySolution:
        opts = self.options
        started = time.perf_counter()
        N, T = problem.N, problem.T
        U = problem.difference
        gq = problem.pv_reactive_ratio
        lam = problem.lam
        alpha = opts.relaxation
        scale = _data_scale(problem) if opts.normalize else 1.0

        k_shape = self._setup(problem)
        nk, nd = int(np.prod(k_shape)), N * T
        n = nk + 2 * nd

        def unpack(flat):
            return (
                flat[:nk].reshape(k_shape),
                flat[nk : nk + nd].reshape(N, T),
                flat[nk + nd :].reshape(N, T),
            )

        def pack(k, Dp, Dq):
            return np.concatenate([np.ravel(k), np.ravel(Dp), np.ravel(Dq)])

        def demand(k, Dp, Dq):
            K = self._expand(k)
            return U.apply(K + Dp), U.apply(gq * K + Dq)

        def demand_adjoint(Wp, Wq):
            Yp, Yq = U.adjoint(Wp), U.adjoint(Wq)
            return self._expand_adjoint(Yp + gq * Yq), Yp, Yq

        blocks = self._blocks(problem, scale)
        boxes = [block for block in blocks if block.center is not None]
        for block in blocks:
            # unit root-mean-square column norm, on par with the identity copies
            norm = estimate_frobenius(lambda flat, b=block: b.forward(*demand(*unpack(flat))), (n,))
            block.weight = np.sqrt(n) / norm if norm > 0 else 1.0
            logger.debug(f"{block.name} block: weight {block.weight:.4e}")

        def apply_blocks(flat):
            Xp, Xq = demand(*unpack(flat))
            return [block.weight * block.forward(Xp, Xq) for block in blocks]

        def adjoint_blocks(residuals):
            Wp, Wq = np.zeros((N, T)), np.zeros((N, T))
            for block, R in zip(blocks, residuals):
                wp, wq = block.adjoint(R)
                Wp += block.weight * wp
                Wq += block.weight * wq
            return pack(*demand_adjoint(Wp, Wq))

        def violation(k, Dp, Dq):
            Xp, Xq = demand(k, Dp, Dq)
            ratios = [0.0]
            for block in boxes:
                misfit = np.abs(block.forward(Xp, Xq) - block.center)
                ratios.append(float(np.max(misfit / block.bound)))
            return max(ratios)

        normal = LinearOperator(
            (n, n), matvec=lambda f: f + adjoint_blocks(apply_blocks(f)), dtype=float
        )
        n_constraints = n + sum(int(np.prod(block.shape)) for block in blocks)

        x = np.zeros(n)
        zk, zp, zq = np.zeros(k_shape), np.zeros((N, T)), np.zeros((N, T))
        uk, up, uq = np.zeros(k_shape), np.zeros((N, T)), np.zeros((N, T))
        ys = [np.zeros(block.shape) for block in blocks]
        us = [np.zeros(block.shape) for block in blocks]
        rho = opts.rho

        primal_trace: List[float] = []
        dual_trace: List[float] = []
        objective_trace: List[float] = []
        violation_trace: List[float] = []
        cg_total = 0
        best = None
        best_violation = np.inf
        converged = False
        iteration = 0

        def count_cg(_):
            nonlocal cg_total
            cg_total += 1

        for iteration in range(1, opts.max_iter + 1):
            rhs = pack(zk - uk, zp - up, zq - uq) + adjoint_blocks(
                [y - u for y, u in zip(ys, us)]
            )
            x, info = cg(
                normal, rhs, x0=x, rtol=opts.cg_tol, maxiter=opts.cg_max_iter, callback=count_cg
            )
            if info > 0:
                logger.debug(f"iteration {iteration}: CG stopped after {info} steps")
            k, Dp, Dq = unpack(x)
            Gx = apply_blocks(x)

            # over-relaxed points fed to the copy updates
            hk = alpha * k + (1 - alpha) * zk
            hp = alpha * Dp + (1 - alpha) * zp
            hq = alpha * Dq + (1 - alpha) * zq
            hs = [alpha * g + (1 - alpha) * y for g, y in zip(Gx, ys)]

            zk_old, zp_old, zq_old, ys_old = zk, zp, zq, ys
            zk = self._prox(hk + uk, rho)
            zp, zq = prox_group_l1(hp + up, hq + uq, lam / rho)
            ys = [block.project(h + u) for block, h, u in zip(blocks, hs, us)]

            uk, up, uq = uk + hk - zk, up + hp - zp, uq + hq - zq
            us = [u + h - y for u, h, y in zip(us, hs, ys)]

            rs = [g - y for g, y in zip(Gx, ys)]
            primal = float(
                np.sqrt(
                    np.sum((k - zk) ** 2)
                    + np.sum((Dp - zp) ** 2)
                    + np.sum((Dq - zq) ** 2)
                    + sum(np.sum(r**2) for r in rs)
                )
            )
            dual = rho * float(
                np.linalg.norm(
                    pack(zk - zk_old, zp - zp_old, zq - zq_old)
                    + adjoint_blocks([y - yo for y, yo in zip(ys, ys_old)])
                )
            )
            gx_norm = np.sqrt(np.sum(x**2) + sum(np.sum(g**2) for g in Gx))
            z_norm = np.sqrt(
                np.sum(zk**2) + np.sum(zp**2) + np.sum(zq**2) + sum(np.sum(y**2) for y in ys)
            )
            eps_pri = np.sqrt(n_constraints) * opts.abs_tol + opts.tol * max(gx_norm, z_norm)
            eps_dual = np.sqrt(n) * opts.abs_tol + opts.tol * rho * float(
                np.linalg.norm(pack(uk, up, uq) + adjoint_blocks(us))
            )
            objective = self._penalty(zk) + lam * group_l1_norm(zp, zq)
            current = violation(zk, zp, zq)

            primal_trace.append(primal)
            dual_trace.append(dual)
            objective_trace.append(objective)
            violation_trace.append(current)

            if current <= best_violation:
                best_violation = current
                best = (zk.copy(), zp.copy(), zq.copy(), primal, dual)

            if iteration % opts.log_every == 0:
                logger.debug(
                    f"[{self.mode}] iter {iteration}: r={primal:.3e} (eps {eps_pri:.3e}) "
                    f"s={dual:.3e} (eps {eps_dual:.3e}) obj={objective:.6e} "
                    f"viol={current:.3f} rho={rho:.3g}"
                )

            if primal <= eps_pri and dual <= eps_dual:
                converged = True
                break

            if opts.adaptive_rho and iteration % opts.adapt_every == 0:
                # balance the residuals relative to their tolerances
                ratio = (primal / eps_pri) / max(dual / eps_dual, 1e-300)
                if ratio > opts.balance_ratio:
                    factor = 1.0 / opts.balance_factor
                elif ratio < 1.0 / opts.balance_ratio:
                    factor = opts.balance_factor
                else:
                    factor = 1.0
                if factor != 1.0:
                    rho /= factor
                    uk, up, uq = uk * factor, up * factor, uq * factor
                    us = [u * factor for u in us]

        if converged:
            k_hat, Dp_hat, Dq_hat = zk, zp, zq
            primal, dual = primal_trace[-1], dual_trace[-1]
        else:
            k_hat, Dp_hat, Dq_hat, primal, dual = best

        norms = group_norms(Dp_hat, Dq_hat)
        peak = float(norms.max(initial=0.0))
        if peak > 0:
            small = norms < opts.truncation * peak
            Dp_hat = np.where(small, 0.0, Dp_hat)
            Dq_hat = np.where(small, 0.0, Dq_hat)

        polished = False
        if opts.polish:
            refit = self._polish(boxes, U, gq, k_hat, Dp_hat, Dq_hat)
            if refit is not None:
                before = violation(k_hat, Dp_hat, Dq_hat)
                after = violation(*refit)
                _, Xq = demand(*refit)
                signed = not problem.nonnegative_q or float(Xq.min(initial=0.0)) >= -opts.abs_tol
                if signed and after <= max(1.0, before):
                    logger.debug(f"[{self.mode}] refit accepted, violation {before:.3g} -> {after:.3g}")
                    k_hat, Dp_hat, Dq_hat = refit
                    polished = True
        objective = self._penalty(k_hat) + lam * group_l1_norm(Dp_hat, Dq_hat)

        K, v = self._finish(k_hat, scale)
        Dp_hat, Dq_hat = Dp_hat * scale, Dq_hat * scale
        X = problem.reconstruct(K, Dp_hat, Dq_hat)

        max_violation = self._violation(problem, X)
        feasible = max_violation <= opts.feasibility_slack
        suspected = False
        if not converged:
            quarter = len(primal_trace) // 4
            if quarter >= 2:
                recent = np.mean(primal_trace[-quarter:])
                earlier = np.mean(primal_trace[-2 * quarter : -quarter])
                suspected = bool(recent > earlier)
            if suspected:
                logger.warning(
                    f"[{self.mode}] primal residual is growing; the measurement bounds "
                    f"may be infeasible"
                )
            logger.warning(
                f"[{self.mode}] ADMM did not converge in {iteration} iterations "
                f"(r={primal:.3e}, s={dual:.3e}); returning the least-violating iterate"
            )
        elif not feasible:
            logger.warning(
                f"[{self.mode}] residuals converged but bounds are violated by a factor "
                f"{max_violation:.3f}"
            )

        status = CONVERGED if converged and feasible else NOT_CONVERGED
        support = int(np.count_nonzero(np.hypot(Dp_hat, Dq_hat)))
        diagnostics = SolverDiagnostics(
            solver=self.mode,
            status=status,
            iterations=iteration,
            lam=lam,
            rho=rho,
            primal_residual=primal,
            dual_residual=dual,
            objective=objective,
            feasible=bool(feasible),
            max_violation=float(max_violation),
            infeasibility_suspected=suspected,
            cg_iterations=cg_total,
            support=support,
            polished=polished,
            primal_trace=primal_trace,
            dual_trace=dual_trace,
            objective_trace=objective_trace,
            violation_trace=violation_trace,
        )
        wall_time = time.perf_counter() - started
        logger.info(
            f"[{self.mode}] {status} after {iteration} iterations "
            f"({support} change groups, {wall_time:.2f}s)"
        )
        return RecoverySolution(
            mode=self.mode,
            K=K,
            Dp=Dp_hat,
            Dq=Dq_hat,
            P=X[:N],
            Q=X[N:],
            diagnostics=diagnostics,
            v=v,
            capacities=None if problem.capacities is None else np.asarray(problem.capacities),
            wall_time=wall_time,
        )

    def _polish(
        self,
        boxes: List[_ConstraintBlock],
        U,
        gq: float,
        k: np.ndarray,
        Dp: np.ndarray,
        Dq: np.ndarray,
    ) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Least-squares refit of the box centers with the support held fixed.

        The low-rank part keeps its column space and its levels are refit;
        only nonzero change groups are free. LSQR starts from the ADMM point,
        so directions the measurements cannot see keep their ADMM values.
        """
        if not boxes:
            return None
        N, T = Dp.shape
        basis = self._basis(k)
        r = basis.shape[1]
        support = np.hypot(Dp, Dq) > 0
        nl, ns = r * T, int(np.count_nonzero(support))
        if nl + 2 * ns == 0:
            return None

        def demand(p):
            L = p[:nl].reshape(r, T)
            Sp, Sq = np.zeros((N, T)), np.zeros((N, T))
            Sp[support] = p[nl : nl + ns]
            Sq[support] = p[nl + ns :]
            low = basis @ L
            return low + U.apply(Sp), gq * low + U.apply(Sq)

        def forward(p):
            Xp, Xq = demand(p)
            return np.concatenate([np.ravel(b.forward(Xp, Xq) / b.bound) for b in boxes])

        def adjoint(flat):
            Wp, Wq = np.zeros((N, T)), np.zeros((N, T))
            offset = 0
            for b in boxes:
                size = int(np.prod(b.shape))
                wp, wq = b.adjoint(flat[offset : offset + size].reshape(b.shape) / b.bound)
                Wp += wp
                Wq += wq
                offset += size
            return np.concatenate(
                [np.ravel(basis.T @ (Wp + gq * Wq)), U.adjoint(Wp)[support], U.adjoint(Wq)[support]]
            )

        levels = U.apply(self._coefficients(basis, k))
        p0 = np.concatenate([np.ravel(levels), Dp[support], Dq[support]])
        target = np.concatenate([np.ravel(b.center / b.bound) for b in boxes])
        J = LinearOperator((target.size, p0.size), matvec=forward, rmatvec=adjoint, dtype=float)
        step = lsqr(
            J,
            target - forward(p0),
            atol=self.options.polish_tol,
            btol=self.options.polish_tol,
            iter_lim=self.options.polish_max_iter,
        )[0]
        p = p0 + step
        Sp, Sq = np.zeros((N, T)), np.zeros((N, T))
        Sp[support] = p[nl : nl + ns]
        Sq[support] = p[nl + ns :]
        k_new = self._compose(basis, U.inverse(p[:nl].reshape(r, T)))
        return k_new, Sp, Sq

    @staticmethod
    def _violation(problem: RecoveryProblem, X: np.ndarray) -> float:
        """Largest ratio of measurement misfit to its bound."""
        ratios = [0.0]
        if problem.gamma is not None:
            misfit = np.abs(problem.gamma - problem.averaging.apply(X))
            ratios.append(float(np.max(misfit / problem.gamma_bounds)))
        if problem.Z is not None:
            misfit = np.abs(problem.Z - problem.feeder.apply(X))
            ratios.append(float(np.max(misfit / problem.z_bounds)))
        return max(ratios)


class FullRankSolver(RecoverySolver):
    """Nuclear-norm regularized recovery of a general low-rank K."""

    mode = "full"

    def _setup(self, problem):
        self._shape = (problem.N, problem.T)
        return self._shape

    def _expand(self, k):
        return k

    def _expand_adjoint(self, G):
        return G

    def _prox(self, a, rho):
        return prox_nuclear(a, 1.0 / rho)

    def _penalty(self, k):
        return nuclear_norm(k)

    def _finish(self, k, scale):
        return k * scale, None

    def _basis(self, k):
        left, singular, _ = np.linalg.svd(k, full_matrices=False)
        if singular.size == 0 or singular[0] <= 0:
            return np.zeros((k.shape[0], 0))
        rank = int(np.count_nonzero(singular > self.options.polish_rank_tol * singular[0]))
        return left[:, :rank]

    def _coefficients(self, basis, k):
        return basis.T @ k

    def _compose(self, basis, coefficients):
        return basis @ coefficients


class RankOneSolver(RecoverySolver):
    """K = u v^T with known relative PV capacities u; ridge penalty on v."""

    mode = "rank1"

    def _setup(self, problem):
        if problem.capacities is None:
            raise BadParameter("rank-one recovery needs the relative PV capacities u")
        u = np.asarray(problem.capacities, dtype=float)
        peak = float(np.max(np.abs(u)))
        if peak == 0:
            raise BadParameter("capacity vector u is identically zero")
        self._u_peak = peak
        self._u_raw = u
        self._u = u / peak
        return (problem.T,)

    def _expand(self, k):
        return np.outer(self._u, k)

    def _expand_adjoint(self, G):
        return self._u @ G

    def _prox(self, a, rho):
        return prox_ridge(a, rho)

    def _penalty(self, k):
        return 0.5 * float(np.sum(k**2))

    def _finish(self, k, scale):
        v = k * scale / self._u_peak
        return np.outer(self._u_raw, v), v

    def _basis(self, k):
        return self._u[:, None]

    def _coefficients(self, basis, k):
        return k[None, :]

    def _compose(self, basis, coefficients):
        return coefficients[0]


def solve_full(problem: RecoveryProblem, opts: Optional[SolverOptions] = None) -> RecoverySolution:
    return RecoverySolver.create("full", options=opts).solve(problem)


def solve_rank_one(
    problem: RecoveryProblem, opts: Optional[SolverOptions] = None
) -> RecoverySolution:
    return RecoverySolver.create("rank1", options=opts).solve(problem)
