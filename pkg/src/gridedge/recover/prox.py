"""Norms and proximal operators used by the recovery solvers."""

from typing import Tuple

import numpy as np

from gridedge.shared.exceptions import BadParameter, NumericalError


def nuclear_norm(K: np.ndarray) -> float:
    """Sum of singular values."""
    K = np.atleast_2d(K)
    if K.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(K, compute_uv=False)))


def group_norms(Dp: np.ndarray, Dq: np.ndarray) -> np.ndarray:
    """Entrywise 2-norm of the (P, Q) change pairs."""
    Dp, Dq = np.asarray(Dp), np.asarray(Dq)
    if Dp.shape != Dq.shape:
        raise BadParameter(f"change matrices differ in shape: {Dp.shape} vs {Dq.shape}")
    return np.hypot(Dp, Dq)


def group_l1_norm(Dp: np.ndarray, Dq: np.ndarray) -> float:
    return float(np.sum(group_norms(Dp, Dq)))


def prox_nuclear(M: np.ndarray, tau: float) -> np.ndarray:
    """Singular value soft-thresholding.

    Raises:
        NumericalError: the SVD did not converge.
    """
    if tau < 0:
        raise BadParameter(f"threshold must be nonnegative, got {tau}")
    M = np.atleast_2d(M)
    if tau == 0:
        return M.copy()
    try:
        left, sigma, right = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"SVD failed in singular value thresholding: {e}") from e
    shrunk = np.maximum(sigma - tau, 0.0)
    keep = shrunk > 0
    return (left[:, keep] * shrunk[keep]) @ right[keep]


def prox_group_l1(Dp: np.ndarray, Dq: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """Block soft-thresholding of every (P, Q) pair; pairs with norm <= tau vanish."""
    if tau < 0:
        raise BadParameter(f"threshold must be nonnegative, got {tau}")
    norms = group_norms(Dp, Dq)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norms > tau, 1.0 - tau / norms, 0.0)
    return factor * Dp, factor * Dq


def project_box(R: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Entrywise clamp of R into [-B, B]."""
    return np.clip(R, -B, B)


def prox_ridge(a: np.ndarray, rho: float) -> np.ndarray:
    """Minimizer of 0.5*||w||^2 + 0.5*rho*||w - a||^2."""
    return rho * np.asarray(a) / (1.0 + rho)
