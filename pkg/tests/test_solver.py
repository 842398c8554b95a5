import dataclasses

import numpy as np
import pytest

from gridedge.apps import correlation, daylight_mask, extract_pattern, truth_ev_events
from gridedge.config import RecoveryConfig
from gridedge.experiment import recovery_problem, relative_error
from gridedge.recover import (
    CONVERGED,
    NOT_CONVERGED,
    AveragingOperator,
    DifferenceOperator,
    FeederOperator,
    RecoveryProblem,
    RecoverySolver,
    SolverOptions,
    default_lambda,
    lambda_path,
    solve_full,
    solve_rank_one,
)
from gridedge.shared.exceptions import BadParameter
from gridedge.synth import ScenarioConfig, generate_ground_truth, synthesize


T = 30


def step_truth():
    """One house stepping from 500 W to 2500 W at minute 10."""
    P = np.full((1, T), 500.0)
    Q = np.full((1, T), 100.0)
    P[:, 10:] = 2500.0
    Q[:, 10:] = 400.0
    return P, Q


def feeder_problem(lam=None, capacities=None):
    """Noiseless per-minute readings of the house through an identity sensor."""
    P, Q = step_truth()
    Z = np.vstack([P, Q])
    return RecoveryProblem(
        difference=DifferenceOperator(T),
        lam=default_lambda(T) if lam is None else lam,
        Z=Z,
        feeder=FeederOperator.fixed(np.eye(2), T),
        z_bounds=np.ones_like(Z),
        n_loads=1,
        capacities=capacities,
    )


def zero_problem(N=2):
    gamma = np.zeros((2 * N, 2))
    return RecoveryProblem(
        difference=DifferenceOperator(T),
        lam=default_lambda(T),
        gamma=gamma,
        averaging=AveragingOperator(T=T, interval=15),
        gamma_bounds=np.ones_like(gamma),
        n_loads=N,
        capacities=np.ones(N),
    )


@pytest.mark.parametrize(
    "horizon,expected", [(1440, 0.05), (5760, 0.025), (360, 0.1)]
)
def test_default_lambda(horizon, expected):
    assert default_lambda(horizon) == pytest.approx(expected)


def test_lambda_path_is_sorted():
    assert lambda_path(0.1, (5.0, 0.2, 1.0)) == pytest.approx([0.02, 0.1, 0.5])
    with pytest.raises(BadParameter):
        lambda_path(0.0)


def test_unknown_mode():
    with pytest.raises(BadParameter, match="Unknown solver mode"):
        RecoverySolver.create("sparse-only")
    assert set(RecoverySolver.subclasses) >= {"full", "rank1"}


def test_problem_validation():
    with pytest.raises(BadParameter):
        RecoveryProblem(difference=DifferenceOperator(T), lam=0.0, n_loads=1)
    with pytest.raises(BadParameter, match="smart-meter or feeder"):
        RecoveryProblem(difference=DifferenceOperator(T), lam=0.1, n_loads=1)
    gamma = np.zeros((2, 2))
    with pytest.raises(BadParameter, match="strictly positive"):
        RecoveryProblem(
            difference=DifferenceOperator(T),
            lam=0.1,
            gamma=gamma,
            averaging=AveragingOperator(T=T, interval=15),
            gamma_bounds=np.zeros_like(gamma),
            n_loads=1,
        )


@pytest.mark.parametrize("solve", [solve_full, solve_rank_one])
def test_zero_measurements_give_zero_loads(solve):
    solution = solve(zero_problem())
    assert solution.status == CONVERGED
    assert solution.diagnostics.iterations == 1
    np.testing.assert_array_equal(solution.P, 0.0)
    np.testing.assert_array_equal(solution.Q, 0.0)
    assert solution.support == 0


def test_rank_one_needs_capacities():
    with pytest.raises(BadParameter, match="capacities"):
        solve_rank_one(feeder_problem())
    with pytest.raises(BadParameter, match="identically zero"):
        solve_rank_one(feeder_problem(capacities=np.zeros(1)))


def test_huge_lambda_removes_every_change():
    opts = SolverOptions(max_iter=50)
    solution = solve_full(feeder_problem(lam=1e6), opts)
    assert solution.support == 0
    np.testing.assert_array_equal(solution.Dp, 0.0)
    np.testing.assert_array_equal(solution.Dq, 0.0)
    assert solution.diagnostics.lam == 1e6


def test_full_recovery_of_a_step():
    P, Q = step_truth()
    solution = solve_full(feeder_problem())
    assert np.abs(solution.P - P).max() <= 0.05 * 2500.0
    assert np.abs(solution.Q - Q).max() <= 0.05 * 400.0
    # the reactive step can only come from the change matrix
    assert np.hypot(solution.Dp, solution.Dq)[0, 10] > 0
    assert solution.support >= 1
    assert len(solution.diagnostics.primal_trace) == solution.diagnostics.iterations


def test_rank_one_solution_is_an_outer_product():
    solution = solve_rank_one(feeder_problem(capacities=np.array([2.0])))
    assert solution.v.shape == (T,)
    np.testing.assert_allclose(solution.K, 2.0 * solution.v[None, :])
    np.testing.assert_allclose(solution.capacities, [2.0])
    assert solution.mode == "rank1"


def test_larger_lambda_never_adds_support():
    small = solve_full(feeder_problem())
    large = solve_full(feeder_problem(lam=1e6), SolverOptions(max_iter=50))
    assert large.support <= small.support



def independent_violation(problem, solution):
    """Largest misfit-to-bound ratio, recomputed from the returned loads."""
    ratios = []
    if problem.gamma is not None:
        misfit = np.abs(problem.gamma - problem.averaging.apply(solution.X))
        ratios.append(np.max(misfit / problem.gamma_bounds))
    if problem.Z is not None:
        misfit = np.abs(problem.Z - problem.feeder.apply(solution.X))
        ratios.append(np.max(misfit / problem.z_bounds))
    return float(max(ratios))


def test_lambda_path_shrinks_the_support():
    lams = lambda_path(default_lambda(T)) + [1e6]
    supports = []
    for lam in lams:
        opts = SolverOptions(max_iter=50) if lam == 1e6 else SolverOptions()
        solution = solve_full(feeder_problem(lam=lam), opts)
        supports.append(solution.support)
    assert supports == sorted(supports, reverse=True)
    assert supports[-1] == 0


@pytest.mark.parametrize("solve", [solve_full, solve_rank_one])
def test_converged_solutions_meet_the_bounds(solve):
    problem = feeder_problem(capacities=np.array([1.0]))
    solution = solve(problem)
    if solution.status == CONVERGED:
        assert independent_violation(problem, solution) <= 1.05
        assert solution.diagnostics.max_violation == pytest.approx(
            independent_violation(problem, solution)
        )


def noisy_stock_problem(stock, stock_adm, mode="full"):
    scenario = ScenarioConfig(
        n_houses=4,
        horizon=120,
        start_minute=600,
        ev={"sessions": 2, "window": [10, 80], "duration": [20, 40]},
        pv={"fraction": 0.5},
        seed=5,
    )
    gt = generate_ground_truth(scenario)
    ms = synthesize(stock, stock_adm, gt, scenario)
    return gt, recovery_problem(ms, RecoveryConfig(mode=mode), capacities=gt.capacities)


def test_unconverged_solver_returns_the_least_violating_iterate(stock, stock_adm):
    gt, problem = noisy_stock_problem(stock, stock_adm)
    opts = SolverOptions(max_iter=30, polish=False, truncation=0.0)
    solution = solve_full(problem, opts)
    trace = solution.diagnostics.violation_trace
    assert solution.status == NOT_CONVERGED
    assert len(trace) == 30
    # never worse than where the iterations stopped
    assert solution.diagnostics.max_violation <= trace[-1] * (1 + 1e-3) + 1e-9
    assert solution.diagnostics.max_violation == pytest.approx(min(trace), rel=1e-6, abs=1e-9)
    assert np.any(solution.X)
    assert relative_error(solution.X, gt.loads.X) < 0.5


@pytest.fixture(scope="module")
def sparse_stock_instance(stock, stock_adm):
    """Four houses over four midday hours with six EV steps, measured without noise."""
    scenario = ScenarioConfig(
        n_houses=4,
        horizon=240,
        start_minute=600,
        appliances={"rate": 0},
        ev={"sessions": 3, "window": [20, 120], "duration": [40, 90]},
        pv={"fraction": 0.5},
        smart_meter_accuracy=0.0,
        dpmu_accuracy=0.0,
        seed=2,
    )
    gt = generate_ground_truth(scenario)
    ms = synthesize(stock, stock_adm, gt, scenario)
    X = gt.loads.X
    # readings consistent with the linear model, so the truth is feasible by construction
    Z = ms.feeder.apply(X)
    gamma = ms.averaging.apply(X)
    ms = dataclasses.replace(
        ms,
        gamma=gamma,
        gamma_bounds=np.ones_like(gamma),
        Z=Z,
        z_bounds=np.maximum(0.002 * np.abs(Z), 1.0),
    )
    return gt, ms


@pytest.fixture(scope="module")
def sparse_stock_solutions(sparse_stock_instance):
    gt, ms = sparse_stock_instance
    solutions = {}
    for mode in ("rank1", "full"):
        problem = recovery_problem(ms, RecoveryConfig(mode=mode), capacities=gt.capacities)
        solutions[mode] = RecoverySolver.create(mode).solve(problem)
    return solutions


@pytest.mark.slow
@pytest.mark.parametrize("mode", ["rank1", "full"])
def test_noiseless_stock_recovery(sparse_stock_instance, sparse_stock_solutions, mode):
    gt, _ = sparse_stock_instance
    assert len(truth_ev_events(gt)) == 6
    solution = sparse_stock_solutions[mode]
    assert relative_error(solution.X, gt.loads.X) <= 1e-2
    if mode == "rank1":
        assert solution.wall_time <= 60.0


@pytest.mark.slow
def test_full_and_rank_one_recoveries_agree(sparse_stock_instance, sparse_stock_solutions):
    gt, _ = sparse_stock_instance
    full, rank1 = sparse_stock_solutions["full"], sparse_stock_solutions["rank1"]
    assert abs(relative_error(full.X, gt.loads.X) - relative_error(rank1.X, gt.loads.X)) <= 0.02
    daytime = daylight_mask(gt.loads.T, gt.start_minute)
    recovered = extract_pattern(rank1, daytime)
    assert correlation(recovered.rho, gt.pattern) >= 0.99
