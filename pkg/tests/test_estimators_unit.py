import itertools
import logging
import math

import numpy as np
import pytest
from scipy import special

from molecular_sync.channel_sim import build_release_schedule, modulation_scheme, simulate_arrival_batch, \
    simulate_arrivals, simulate_blind_batch
from molecular_sync.estimators import blind_ule1, blind_ule1_batch, decision_directed_batch, \
    decision_directed_estimate, demodulate_first_symbol, df_estimate, df_estimate_batch, \
    estimate_confusion_matrix, iule_estimate, iule_estimate_batch, iule_precompute, iule_step, log_likelihood, \
    mle_estimate, ule_estimate, ule_estimate_batch, ule_fit, ule_theoretical_mse
from molecular_sync.ig_distribution import ig_logpdf, ig_mode
from molecular_sync.models import ComplexityLimitExceeded, IgParams, InfeasibleSearchInterval, IulePrecompute
from molecular_sync.order_statistics import sorted_arrival_stats
from molecular_sync.theory import ule2_theoretical_mse

PARAMS = IgParams(mu=10.0, lam=8.1955)


def brute_force_log_likelihood(tau, y, x):
    terms = [math.fsum(float(ig_logpdf(y[j] - x[i] - tau, PARAMS)) for i, j in enumerate(permutation))
             for permutation in itertools.permutations(range(len(y)))]
    return float(special.logsumexp(terms))


@pytest.mark.unit
def test_log_likelihood_matches_permutation_enumeration():
    rng = np.random.default_rng(100)
    for instance in range(100):
        counts = [int(c) for c in rng.integers(1, 3, size=rng.integers(1, 4))]
        while sum(counts) > 5:
            counts.pop()
        schedule = build_release_schedule(counts, 15.0)
        observation = simulate_arrivals(schedule, 0.0, PARAMS, rng)
        tau = float(rng.uniform(-3.0, 0.0))
        expected = brute_force_log_likelihood(tau, observation.y, schedule.x)
        actual = log_likelihood(tau, observation.y, schedule.x, PARAMS)
        assert actual == pytest.approx(expected, rel=1e-9, abs=1e-12), \
            f"instance {instance} with symbols {counts}: {actual} vs {expected}"
    logging.warning("Successfully tested test_log_likelihood_matches_permutation_enumeration")


@pytest.mark.unit
def test_log_likelihood_identical_release_shortcut():
    y = [3.0, 7.5, 12.0, 30.0]
    x = [0.0, 0.0, 0.0, 0.0]
    expected = brute_force_log_likelihood(-1.0, y, x)
    assert log_likelihood(-1.0, y, x, PARAMS) == pytest.approx(expected, rel=1e-12)
    logging.warning("Successfully tested test_log_likelihood_identical_release_shortcut")


@pytest.mark.unit
def test_log_likelihood_infeasible_offset():
    assert log_likelihood(5.0, [4.0, 9.0], [0.0, 30.0], PARAMS) == -np.inf, "an arrival before tau is impossible"
    logging.warning("Successfully tested test_log_likelihood_infeasible_offset")


@pytest.mark.unit
def test_log_likelihood_refuses_large_observations():
    with pytest.raises(ComplexityLimitExceeded) as error:
        log_likelihood(0.0, np.arange(1.0, 10.0), np.zeros(9), PARAMS)
    assert error.value.n == 9 and error.value.n_max == 8, "limit context was not recorded"
    logging.warning("Successfully tested test_log_likelihood_refuses_large_observations")


@pytest.mark.unit
def test_mle_single_molecule_is_arrival_minus_mode():
    for y in (4.0, 12.5, 40.0):
        estimate = mle_estimate([y], [0.0], PARAMS)
        assert estimate == pytest.approx(y - ig_mode(PARAMS), abs=2e-3), f"mle for y={y} was {estimate}"
    logging.warning("Successfully tested test_mle_single_molecule_is_arrival_minus_mode")


@pytest.mark.unit
def test_mle_is_shift_equivariant():
    schedule = build_release_schedule([2, 2], 30.0)
    observation = simulate_arrivals(schedule, 0.0, PARAMS, np.random.default_rng(21))
    base = mle_estimate(observation.y, schedule.x, PARAMS)
    moved = mle_estimate(np.asarray(observation.y) + 17.0, schedule.x, PARAMS)
    assert moved - base == pytest.approx(17.0, abs=3e-3), f"shift moved the estimate by {moved - base}"
    logging.warning("Successfully tested test_mle_is_shift_equivariant")


@pytest.mark.unit
def test_mle_rejects_empty_interval():
    with pytest.raises(InfeasibleSearchInterval):
        mle_estimate([5.0], [0.0], PARAMS, lower=3.0, upper=3.0)
    with pytest.raises(InfeasibleSearchInterval):
        mle_estimate([5.0], [0.0], PARAMS, lower=6.0, upper=9.0)
    logging.warning("Successfully tested test_mle_rejects_empty_interval")


@pytest.fixture(scope="module")
def stats_four():
    return sorted_arrival_stats(build_release_schedule([4], 30.0), PARAMS, trials=200_000, seed=31)


@pytest.mark.unit
def test_ule_weights_are_unbiased(stats_four):
    weights = ule_fit(stats_four, 4)
    assert math.fsum(weights.a) == pytest.approx(1.0, abs=1e-10), f"weights summed to {math.fsum(weights.a)}"
    assert weights.b == pytest.approx(-float(weights.weights @ stats_four.mean_vector), abs=1e-10)
    single = ule_fit(stats_four, 1)
    assert single.a == [1.0] and single.b == -stats_four.u[0], "n=1 must subtract the first mean"
    logging.warning("Successfully tested test_ule_weights_are_unbiased")


@pytest.mark.unit
def test_ule_window_out_of_range(stats_four):
    with pytest.raises(ValueError):
        ule_fit(stats_four, 5)
    with pytest.raises(ValueError):
        ule_fit(stats_four, 0)
    logging.warning("Successfully tested test_ule_window_out_of_range")


@pytest.mark.unit
def test_ule_is_exactly_shift_equivariant(stats_four):
    weights = ule_fit(stats_four, 4)
    y = np.array([4.0, 6.5, 9.0, 21.0])
    shift = ule_estimate(y + 17.0, weights) - ule_estimate(y, weights)
    assert shift == pytest.approx(17.0, abs=1e-9), f"shift moved the estimate by {shift}"
    batch = ule_estimate_batch(np.vstack([y, y + 17.0]), weights)
    assert batch[0] == pytest.approx(ule_estimate(y, weights), abs=1e-12), "batch and scalar forms disagree"
    logging.warning("Successfully tested test_ule_is_exactly_shift_equivariant")


@pytest.mark.unit
@pytest.mark.parametrize("tau", [-5.0, 0.0, 3.0, 17.0])
def test_ule_is_unbiased(stats_four, tau):
    weights = ule_fit(stats_four, 4)
    schedule = build_release_schedule([4], 30.0)
    y = simulate_arrival_batch(schedule, tau, PARAMS, 20_000, np.random.default_rng(int(tau) + 50))
    errors = ule_estimate_batch(y, weights) - tau
    standard_error = errors.std(ddof=1) / math.sqrt(errors.size)
    assert abs(errors.mean()) <= 4 * standard_error, f"bias {errors.mean()} with SE {standard_error} at tau={tau}"
    logging.warning(f"Successfully tested test_ule_is_unbiased tau={tau}")


@pytest.mark.unit
def test_ule_theoretical_mse_matches_two_arrival_formula(stats_four):
    weights = ule_fit(stats_four, 2)
    covariance = stats_four.covariance
    closed_form = ule2_theoretical_mse(covariance[0, 0], covariance[1, 1], covariance[0, 1])
    assert ule_theoretical_mse(weights, stats_four) == pytest.approx(closed_form, rel=1e-9)
    logging.warning("Successfully tested test_ule_theoretical_mse_matches_two_arrival_formula")


@pytest.mark.unit
def test_iule_step_recursion():
    constants = IulePrecompute(a1=[1.0], u1=[0.0], w=[1.0], m=[0.0], alpha=1.0, n1=1, Ts=10.0)
    assert iule_step(2.0, 1, [13.0], constants) == pytest.approx(2.5), "recursion weights are wrong"
    with pytest.raises(ValueError):
        iule_step(2.0, 0, [13.0], constants)
    with pytest.raises(ValueError):
        iule_step(2.0, 1, [13.0, 14.0], constants)
    logging.warning("Successfully tested test_iule_step_recursion")


@pytest.fixture(scope="module")
def iule_constants():
    stats1 = sorted_arrival_stats(build_release_schedule([2], 1000.0), PARAMS, trials=200_000, seed=41)
    stats3 = sorted_arrival_stats(build_release_schedule([2, 2, 2], 1000.0), PARAMS, trials=200_000, seed=42)
    return stats1, stats3, iule_precompute(stats3, 2, 1000.0, stats1)


@pytest.mark.unit
def test_iule_precompute_far_apart_symbols(iule_constants):
    _, _, constants = iule_constants
    assert math.fsum(constants.w) == pytest.approx(1.0, abs=1e-10), "steady weights must sum to one"
    assert constants.alpha == pytest.approx(1.0, abs=0.05), f"independent symbols gave alpha={constants.alpha}"
    logging.warning("Successfully tested test_iule_precompute_far_apart_symbols")


@pytest.mark.unit
def test_iule_steady_state_matches_single_symbol_when_far_apart(iule_constants):
    stats1, stats3, constants = iule_constants
    steady = ule_fit(stats1, 2)
    assert constants.a1 == pytest.approx(list(steady.a), abs=1e-12), "first-symbol weights come from K=1"
    assert constants.w == pytest.approx(list(steady.a), abs=0.02), f"w={constants.w} vs a1={steady.a}"
    for index in range(2):
        standard_error = math.sqrt(stats1.C[index][index] / stats1.mc_trials
                                   + stats3.C[2 + index][2 + index] / stats3.mc_trials)
        assert abs(constants.m[index] - constants.u1[index]) <= 3 * standard_error, \
            f"m={constants.m} vs u1={constants.u1}"
    logging.warning("Successfully tested test_iule_steady_state_matches_single_symbol_when_far_apart")


@pytest.mark.unit
def test_iule_precompute_overlapping_symbols():
    Ts = 1.5 * PARAMS.mu
    stats3 = sorted_arrival_stats(build_release_schedule([4, 4, 4], Ts), PARAMS, trials=200_000, seed=44)
    constants = iule_precompute(stats3, 4, Ts)
    assert constants.alpha > 1.0, f"interference must weigh the first symbol up, alpha={constants.alpha}"
    assert math.fsum(constants.w) == pytest.approx(1.0, abs=1e-10), "steady weights must sum to one"
    logging.warning("Successfully tested test_iule_precompute_overlapping_symbols")


@pytest.mark.unit
def test_iule_single_symbol_equals_ule(iule_constants):
    stats1, _, constants = iule_constants
    y = np.array([5.0, 11.0])
    expected = ule_estimate(y, ule_fit(stats1, 2))
    assert iule_estimate(y, constants, 1) == pytest.approx(expected, abs=1e-12), "K=1 must reduce to ULE"
    logging.warning("Successfully tested test_iule_single_symbol_equals_ule")


@pytest.mark.unit
def test_iule_is_unbiased_and_batch_matches_scalar(iule_constants):
    _, _, constants = iule_constants
    schedule = build_release_schedule([2] * 4, 1000.0)
    y = simulate_arrival_batch(schedule, 3.0, PARAMS, 20_000, np.random.default_rng(43))
    estimates = iule_estimate_batch(y, constants, 4)
    assert estimates[7] == pytest.approx(iule_estimate(y[7], constants, 4), abs=1e-10), "batch and scalar differ"
    errors = estimates - 3.0
    standard_error = errors.std(ddof=1) / math.sqrt(errors.size)
    assert abs(errors.mean()) <= 4 * standard_error, f"bias {errors.mean()} with SE {standard_error}"
    logging.warning("Successfully tested test_iule_is_unbiased_and_batch_matches_scalar")


@pytest.mark.unit
def test_iule_precompute_rejects_wrong_schedule(iule_constants):
    stats1, _, _ = iule_constants
    with pytest.raises(ValueError):
        iule_precompute(stats1, 2, 1000.0)
    logging.warning("Successfully tested test_iule_precompute_rejects_wrong_schedule")


@pytest.mark.unit
def test_blind_first_arrival_estimate():
    scheme = modulation_scheme(8, 2, 30.0, 1)
    v = [4.0, 2.0]
    assert blind_ule1(10.0, scheme, v) == pytest.approx(7.0), "blind estimate must subtract the prior mean of v"
    assert blind_ule1_batch(np.array([10.0, 11.0]), scheme, v).tolist() == [7.0, 8.0]
    with pytest.raises(ValueError):
        blind_ule1(10.0, scheme, [4.0])
    logging.warning("Successfully tested test_blind_first_arrival_estimate")


@pytest.mark.unit
def test_demodulation_ties_go_to_smaller_level():
    scheme = modulation_scheme(8, 2, 30.0, 1)
    y = np.concatenate([np.linspace(1.0, 8.0, 8), [40.0]])
    assert demodulate_first_symbol(y, 0.0, scheme) == 4, "a count of 8 is equidistant and must pick level 4"
    assert demodulate_first_symbol(y[:3], 0.0, scheme) == 4
    assert demodulate_first_symbol(np.linspace(1.0, 20.0, 11), 0.0, scheme) == 12
    logging.warning("Successfully tested test_demodulation_ties_go_to_smaller_level")


@pytest.mark.unit
def test_decision_feedback_scalar_and_batch_agree():
    scheme = modulation_scheme(8, 2, 30.0, 1)
    v = [3.1, 0.9]
    y, symbols = simulate_blind_batch(scheme, 2.0, PARAMS, 200, np.random.default_rng(61))
    estimates, detected = df_estimate_batch(y, scheme, v)
    for row in range(0, 200, 37):
        assert estimates[row] == pytest.approx(df_estimate(y[row], scheme, v), abs=1e-12), f"row {row} differs"
    assert set(np.unique(detected)) <= {4, 12}, "detected levels outside the alphabet"
    directed = decision_directed_batch(y[:, 0], symbols[:, 0], scheme, v)
    assert directed[0] == pytest.approx(decision_directed_estimate(y[0, 0], int(symbols[0, 0]), scheme, v))
    logging.warning("Successfully tested test_decision_feedback_scalar_and_batch_agree")


@pytest.mark.unit
def test_decision_directed_rejects_unknown_level():
    scheme = modulation_scheme(8, 2, 30.0, 1)
    with pytest.raises(ValueError):
        decision_directed_batch(np.array([5.0]), np.array([7]), scheme, [3.0, 1.0])
    logging.warning("Successfully tested test_decision_directed_rejects_unknown_level")


@pytest.mark.unit
def test_confusion_matrix_counts():
    confusion = estimate_confusion_matrix([4, 4, 4, 4, 12, 12], [4, 4, 4, 12, 12, 12], [4, 12])
    assert confusion.q == [[0.75, 0.25], [0.0, 1.0]], f"confusion was {confusion.q}"
    unseen = estimate_confusion_matrix([4, 4], [4, 12], [4, 12])
    assert unseen.q[1] == [0.0, 1.0], "a level never sent must get an identity row"
    logging.warning("Successfully tested test_confusion_matrix_counts")


@pytest.mark.unit
def test_decision_feedback_with_one_level_is_blind():
    scheme = modulation_scheme(8, 1, 30.0, 1)
    v = [2.7]
    y, _ = simulate_blind_batch(scheme, 4.0, PARAMS, 50, np.random.default_rng(62))
    estimates, detected = df_estimate_batch(y, scheme, v)
    assert np.allclose(estimates, blind_ule1_batch(y[:, 0], scheme, v), rtol=0.0, atol=1e-12), \
        "a single hypothesis leaves nothing to decide"
    assert set(np.unique(detected)) == {8}, f"detected levels were {np.unique(detected)}"
    assert df_estimate(y[0], scheme, v) == pytest.approx(blind_ule1(y[0, 0], scheme, v), abs=1e-12)
    logging.warning("Successfully tested test_decision_feedback_with_one_level_is_blind")
