import numpy as np
import pytest

from gridedge.apps import (
    bandpass_remove,
    correlation,
    daylight_mask,
    disaggregate_btm,
    disaggregate_feeder,
    extract_pattern,
    pattern_from_series,
    rms_error,
)
from gridedge.recover import CONVERGED, RecoverySolution, SolverDiagnostics
from gridedge.shared.exceptions import BadParameter, DegenerateFitError, DegeneratePatternError


T = 120


def make_solution(K, v=None):
    diagnostics = SolverDiagnostics(
        solver="rank1" if v is not None else "full",
        status=CONVERGED,
        iterations=1,
        lam=0.1,
        rho=1.0,
        primal_residual=0.0,
        dual_residual=0.0,
        objective=0.0,
        feasible=True,
        max_violation=0.0,
        infeasibility_suspected=False,
        cg_iterations=0,
        support=0,
    )
    zeros = np.zeros_like(K)
    return RecoverySolution(
        mode=diagnostics.solver, K=K, Dp=zeros, Dq=zeros, P=K, Q=zeros,
        diagnostics=diagnostics, v=v,
    )


@pytest.fixture
def night():
    mask = np.zeros(T, dtype=bool)
    mask[:30] = True
    mask[90:] = True
    return mask


@pytest.fixture
def bump(night):
    rho = np.zeros(T)
    rho[30:90] = np.sin(np.pi * (np.arange(60) + 0.5) / 60)
    return rho / np.linalg.norm(rho)


def test_daylight_mask():
    assert daylight_mask(1440).sum() == 719
    mask = daylight_mask(10, start_minute=355)
    assert mask.tolist() == [False] * 6 + [True] * 4


def test_correlation_and_rms():
    a = np.arange(10.0)
    assert correlation(a, 2 * a + 1) == pytest.approx(1.0)
    assert correlation(a, -a) == pytest.approx(-1.0)
    assert correlation(a, np.ones(10)) == 0.0
    assert rms_error(np.array([1.0, 3.0]), np.array([1.0, 1.0])) == pytest.approx(np.sqrt(2.0))


def test_pattern_sign_is_positive_over_daylight():
    series = -np.array([0.0, 1.0, 2.0, 1.0])
    pattern = pattern_from_series(series)
    assert pattern.rho.sum() > 0
    assert np.linalg.norm(pattern.rho) == pytest.approx(1.0)
    with pytest.raises(DegeneratePatternError):
        pattern_from_series(np.zeros(4))


def test_extract_pattern_from_rank_one_factor(bump):
    v = np.diff(bump, prepend=0.0)
    pattern = extract_pattern(make_solution(np.outer([1.0, 2.0], v), v))
    np.testing.assert_allclose(pattern.rho, bump, atol=1e-12)


def test_extract_pattern_from_full_rank(bump):
    v = np.diff(bump, prepend=0.0)
    pattern = extract_pattern(make_solution(np.outer([1.0, 2.0], v)))
    np.testing.assert_allclose(pattern.rho, bump, atol=1e-9)


def test_zero_component_has_no_pattern():
    with pytest.raises(DegeneratePatternError):
        extract_pattern(make_solution(np.zeros((2, T))))
    with pytest.raises(DegeneratePatternError):
        extract_pattern(make_solution(np.zeros((2, T)), np.zeros(T)))


def test_bandpass_removes_the_cycling_band():
    t = np.arange(240)
    slow = np.sin(2 * np.pi * t / 240)
    fast = 0.3 * np.sin(2 * np.pi * t / 20)
    filtered = bandpass_remove(slow + fast, (10.0, 35.0))
    np.testing.assert_allclose(filtered.rho, slow / np.linalg.norm(slow), atol=1e-9)
    assert filtered.source == "filtered"
    with pytest.raises(DegeneratePatternError):
        bandpass_remove(fast, (10.0, 35.0))
    with pytest.raises(BadParameter):
        bandpass_remove(slow, (35.0, 10.0))


def test_fit_recovers_the_solar_scale(bump, night):
    fit = disaggregate_btm(3.0 * bump, bump, night)
    assert fit.beta == pytest.approx(3.0, rel=1e-2)
    assert fit.alpha == pytest.approx(0.0, abs=1e-2)
    np.testing.assert_allclose(fit.generation, 0.0, atol=1e-2)


def test_constant_series_has_no_solar(bump, night):
    fit = disaggregate_btm(np.full(T, 5.0), bump, night)
    assert fit.beta == pytest.approx(0.0, abs=5e-2)
    assert fit.d[0] == pytest.approx(5.0, rel=1e-2)


def test_fit_rejects_degenerate_inputs(bump, night):
    with pytest.raises(DegenerateFitError):
        disaggregate_btm(np.ones(T), np.ones(T), night)
    with pytest.raises(BadParameter):
        disaggregate_btm(np.ones(T), bump, np.zeros(T, dtype=bool))
    with pytest.raises(BadParameter):
        disaggregate_btm(np.ones(T - 1), bump, night)


def test_feeder_generation_sums_the_phases(bump, night):
    head = np.vstack([-3000.0 * bump, -1000.0 * bump, np.full(T, 200.0)])
    fits, total = disaggregate_feeder(head, bump, night)
    assert [fit.phase for fit in fits] == ["a", "b", "c"]
    np.testing.assert_allclose(total, 4000.0 * bump, atol=40.0)


def test_bandpass_only_removes_in_band_energy(rng):
    n = 300
    series = rng.standard_normal(n).cumsum()
    low, high = 10.0, 35.0
    filtered = bandpass_remove(series, (low, high), renormalize=False).rho
    removed = series - filtered

    freqs = np.fft.rfftfreq(n)
    periods = np.divide(1.0, freqs, out=np.full_like(freqs, np.inf), where=freqs > 0)
    band = (periods >= low) & (periods <= high)
    kept, dropped = np.fft.rfft(filtered), np.fft.rfft(removed)
    assert np.abs(kept[band]).max() <= 1e-9 * np.abs(kept).max()
    assert np.abs(dropped[~band]).max() <= 1e-9 * np.abs(kept).max()
    # the two parts are orthogonal, so energy splits exactly
    energy = np.sum(series**2)
    assert np.sum(filtered**2) + np.sum(removed**2) == pytest.approx(energy, rel=1e-10)
    assert np.sum(removed**2) > 0
