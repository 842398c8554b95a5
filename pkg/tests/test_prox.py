import time

import numpy as np
import pytest

from gridedge.recover import (
    group_l1_norm,
    nuclear_norm,
    project_box,
    prox_group_l1,
    prox_nuclear,
    prox_ridge,
)
from gridedge.shared.exceptions import BadParameter


def nuclear_objective(K, M, tau):
    return tau * nuclear_norm(K) + 0.5 * np.sum((K - M) ** 2)


def test_nuclear_norm_of_diagonal():
    assert nuclear_norm(np.diag([3.0, -1.0, 0.5])) == pytest.approx(4.5)
    assert nuclear_norm(np.zeros((0, 4))) == 0.0


def test_singular_value_thresholding_on_diagonal():
    out = prox_nuclear(np.diag([3.0, 1.0, 0.5]), 1.0)
    np.testing.assert_allclose(out, np.diag([2.0, 0.0, 0.0]), atol=1e-12)


def test_singular_value_thresholding_is_the_minimizer(rng):
    M = rng.standard_normal((4, 6))
    tau = 0.8
    K = prox_nuclear(M, tau)
    expected = np.maximum(np.linalg.svd(M, compute_uv=False) - tau, 0.0)
    np.testing.assert_allclose(np.linalg.svd(K, compute_uv=False), expected, atol=1e-10)
    best = nuclear_objective(K, M, tau)
    for _ in range(50):
        trial = K + 1e-2 * rng.standard_normal(K.shape)
        assert nuclear_objective(trial, M, tau) >= best - 1e-12


def test_zero_threshold_is_identity(rng):
    M = rng.standard_normal((3, 3))
    np.testing.assert_array_equal(prox_nuclear(M, 0.0), M)
    with pytest.raises(BadParameter):
        prox_nuclear(M, -1.0)


def test_group_soft_thresholding():
    Dp = np.array([[3.0, 0.3, 0.0]])
    Dq = np.array([[4.0, 0.4, 0.0]])
    assert group_l1_norm(Dp, Dq) == pytest.approx(5.5)
    p, q = prox_group_l1(Dp, Dq, 1.0)
    np.testing.assert_allclose(p, [[2.4, 0.0, 0.0]])
    np.testing.assert_allclose(q, [[3.2, 0.0, 0.0]])
    assert np.all(np.isfinite(p)) and np.all(np.isfinite(q))


def test_group_thresholding_grid_oracle():
    # brute force over a grid for a single (P, Q) pair
    a, tau = np.array([1.2, -0.5]), 0.6
    grid = np.linspace(-2.0, 2.0, 401)
    P, Q = np.meshgrid(grid, grid, indexing="ij")
    values = tau * np.hypot(P, Q) + 0.5 * ((P - a[0]) ** 2 + (Q - a[1]) ** 2)
    i, j = np.unravel_index(np.argmin(values), values.shape)
    p, q = prox_group_l1(np.array([[a[0]]]), np.array([[a[1]]]), tau)
    assert p[0, 0] == pytest.approx(grid[i], abs=0.01)
    assert q[0, 0] == pytest.approx(grid[j], abs=0.01)


def test_group_shapes_must_agree():
    with pytest.raises(BadParameter):
        prox_group_l1(np.zeros((2, 3)), np.zeros((3, 2)), 1.0)


def test_box_projection():
    R = np.array([-5.0, 0.5, 3.0])
    np.testing.assert_array_equal(project_box(R, np.array([1.0, 1.0, 2.0])), [-1.0, 0.5, 2.0])


def test_ridge_prox():
    assert prox_ridge(np.array([2.0]), 1.0)[0] == pytest.approx(1.0)
    assert prox_ridge(np.array([2.0]), 3.0)[0] == pytest.approx(1.5)


def nuclear_residual(M, K, tau):
    """Distance of (M - K) / tau from the subdifferential of the nuclear norm at K."""
    G = (M - K) / tau
    left, sigma, right = np.linalg.svd(K)
    r = int(np.sum(sigma > 1e-10 * max(sigma.max(initial=0.0), 1.0)))
    Ur, Vr = left[:, :r], right[:r].T
    Uc, Vc = left[:, r:], right[r:].T
    residual = np.abs(Ur.T @ G @ Vr - np.eye(r)).max(initial=0.0)
    residual = max(residual, np.abs(Ur.T @ G @ Vc).max(initial=0.0))
    residual = max(residual, np.abs(Uc.T @ G @ Vr).max(initial=0.0))
    rest = Uc.T @ G @ Vc
    if rest.size:
        residual = max(residual, np.linalg.norm(rest, 2) - 1.0)
    return residual


def group_residual(a, b, p, q, tau):
    norms = np.hypot(p, q)
    active = norms > 0
    safe = np.where(active, norms, 1.0)
    rp = np.where(active, a - p - tau * p / safe, 0.0)
    rq = np.where(active, b - q - tau * q / safe, 0.0)
    outside = np.where(active, 0.0, np.maximum(np.hypot(a, b) - tau, 0.0))
    return float(max(np.abs(rp).max(), np.abs(rq).max(), outside.max()))


def grid_minimizer(a, b, tau, levels=9, points=41):
    """Coarse-to-fine grid search of tau*|(p, q)| + 0.5*|(p, q) - (a, b)|^2."""
    center = np.array([a, b])
    span = 4.0 * (np.hypot(a, b) + 1.0)
    for _ in range(levels):
        offsets = np.linspace(-span / 2, span / 2, points)
        P, Q = np.meshgrid(center[0] + offsets, center[1] + offsets, indexing="ij")
        values = tau * np.hypot(P, Q) + 0.5 * ((P - a) ** 2 + (Q - b) ** 2)
        i, j = np.unravel_index(np.argmin(values), values.shape)
        center = np.array([P[i, j], Q[i, j]])
        span /= 4.0
    return center


def test_randomized_proximal_optimality(rng):
    started = time.perf_counter()
    for _ in range(100):
        m, n = rng.integers(1, 7, size=2)
        M = rng.standard_normal((m, n)) * rng.uniform(0.1, 10.0)
        sigma = np.linalg.svd(M, compute_uv=False)
        tau = float(rng.uniform(0.2, 1.2) * np.median(sigma))
        assert nuclear_residual(M, prox_nuclear(M, tau), tau) <= 1e-8

        a = rng.standard_normal((3, 5)) * rng.uniform(0.1, 10.0)
        b = rng.standard_normal((3, 5)) * rng.uniform(0.1, 10.0)
        tau = float(rng.uniform(0.0, 1.5) * np.median(np.hypot(a, b)))
        p, q = prox_group_l1(a, b, tau)
        assert group_residual(a, b, p, q, tau) <= 1e-8
    assert time.perf_counter() - started < 5.0


def test_group_thresholding_matches_a_refined_grid(rng):
    for _ in range(20):
        a, b = rng.standard_normal(2) * rng.uniform(0.1, 5.0)
        tau = float(rng.uniform(0.0, 2.0) * np.hypot(a, b))
        p, q = prox_group_l1(np.array([[a]]), np.array([[b]]), tau)
        expected = grid_minimizer(a, b, tau)
        assert abs(p[0, 0] - expected[0]) <= 1e-4
        assert abs(q[0, 0] - expected[1]) <= 1e-4
