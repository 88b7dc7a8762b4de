import logging
import math

import numpy as np
import pytest
from scipy import integrate, stats

from molecular_sync.ig_distribution import crlb, derive_ig_params, fisher_info_per_molecule, \
    fisher_info_quadrature, ig_cdf, ig_logpdf, ig_mode, ig_moment, ig_negative_moment, ig_pdf, ig_sample, \
    ig_sf, ig_variance, quadrature_expectation, quadrature_integral
from molecular_sync.models import ChannelParams, IgParams, UnsupportedMomentOrder

PARAMS = IgParams(mu=10.0, lam=8.1955)


@pytest.mark.unit
def test_derive_ig_params_from_physical_constants():
    channel = ChannelParams(temperature_Ta=298.0, viscosity_eta=8.9e-4, molecule_radius_r=1e-8,
                            distance_d=2e-5, drift_v=2e-6)
    params = derive_ig_params(channel)
    assert params.mu == pytest.approx(10.0, rel=1e-12), f"mu was {params.mu}"
    assert abs(params.lam - 8.1955) <= 0.05, f"lambda was {params.lam}"
    logging.warning(f"Successfully tested test_derive_ig_params_from_physical_constants lambda={params.lam}")


@pytest.mark.unit
def test_channel_params_reject_nonpositive_constants():
    with pytest.raises(ValueError):
        ChannelParams(temperature_Ta=298.0, viscosity_eta=8.9e-4, molecule_radius_r=1e-8,
                      distance_d=2e-5, drift_v=0.0)
    logging.warning("Successfully tested test_channel_params_reject_nonpositive_constants")


@pytest.mark.unit
def test_ig_params_accept_lambda_alias():
    params = IgParams.parse_obj({"mu": 10.0, "lambda": 8.1955})
    assert params.lam == 8.1955, f"lam was {params.lam}"
    assert params.dict(by_alias=True)["lambda"] == 8.1955, "alias was not used when serializing"
    logging.warning("Successfully tested test_ig_params_accept_lambda_alias")


@pytest.mark.unit
def test_pdf_integrates_to_one():
    total = quadrature_integral(lambda t: float(ig_pdf(t, PARAMS)), PARAMS)
    assert abs(total - 1.0) <= 1e-8, f"density integrated to {total!r}"
    logging.warning("Successfully tested test_pdf_integrates_to_one")


@pytest.mark.unit
def test_pdf_is_zero_before_release():
    values = ig_pdf(np.array([-3.0, 0.0]), PARAMS)
    assert np.all(values == 0.0), f"density before release was {values}"
    assert ig_cdf(0.0, PARAMS) == 0.0, "cdf at zero must be zero"
    assert ig_sf(-1.0, PARAMS) == 1.0, "survival before release must be one"
    assert ig_logpdf(0.0, PARAMS) == -np.inf, "log density at zero must be -inf"
    logging.warning("Successfully tested test_pdf_is_zero_before_release")


@pytest.mark.unit
def test_pdf_value_at_the_mean():
    assert float(ig_pdf(10.0, PARAMS)) == pytest.approx(0.036116, abs=5e-6)
    logging.warning("Successfully tested test_pdf_value_at_the_mean")


@pytest.mark.unit
def test_cdf_matches_integrated_pdf():
    for t in (0.5, 2.0, 5.0, 10.0, 30.0, 120.0):
        integrated, _ = integrate.quad(lambda s: float(ig_pdf(s, PARAMS)), 0.0, t, epsabs=1e-12, epsrel=1e-12,
                                       limit=200)
        assert abs(float(ig_cdf(t, PARAMS)) - integrated) <= 1e-6, f"cdf({t}) disagrees with {integrated}"
        assert float(ig_cdf(t, PARAMS)) + float(ig_sf(t, PARAMS)) == pytest.approx(1.0, abs=1e-12)
    logging.warning("Successfully tested test_cdf_matches_integrated_pdf")


@pytest.mark.unit
def test_cdf_agrees_with_scipy_invgauss():
    times = np.linspace(0.1, 200.0, 50)
    reference = stats.invgauss.cdf(times, PARAMS.mu / PARAMS.lam, scale=PARAMS.lam)
    assert np.allclose(ig_cdf(times, PARAMS), reference, atol=1e-10), "cdf differs from scipy.stats.invgauss"
    logging.warning("Successfully tested test_cdf_agrees_with_scipy_invgauss")


@pytest.mark.unit
def test_sf_keeps_precision_in_the_far_tail():
    survival = float(ig_sf(2000.0, PARAMS))
    reference, _ = integrate.quad(lambda s: float(ig_pdf(s, PARAMS)), 2000.0, np.inf, epsabs=0.0, epsrel=1e-10,
                                  limit=200)
    assert survival > 0.0, "far-tail survival underflowed to zero"
    assert survival == pytest.approx(reference, rel=1e-6), f"sf was {survival}, integrated tail is {reference}"
    logging.warning("Successfully tested test_sf_keeps_precision_in_the_far_tail")


@pytest.mark.unit
def test_sampler_passes_ks_test():
    rng = np.random.default_rng(2024)
    samples = ig_sample(PARAMS, rng, size=100_000)
    assert np.all(samples > 0), "sampler produced a nonpositive delay"
    result = stats.kstest(samples, lambda t: ig_cdf(t, PARAMS))
    assert result.pvalue > 1e-4, f"KS test rejected the sampler with p={result.pvalue}"
    standard_error = math.sqrt(ig_variance(PARAMS) / samples.size)
    assert abs(samples.mean() - PARAMS.mu) <= 4 * standard_error, f"sample mean was {samples.mean()}"
    logging.warning(f"Successfully tested test_sampler_passes_ks_test p={result.pvalue}")


@pytest.mark.unit
def test_sampler_is_reproducible_and_shaped():
    first = ig_sample(PARAMS, np.random.default_rng(5), size=(3, 4))
    second = ig_sample(PARAMS, np.random.default_rng(5), size=(3, 4))
    assert first.shape == (3, 4), f"shape was {first.shape}"
    assert np.array_equal(first, second), "same seed produced different draws"
    assert isinstance(ig_sample(PARAMS, np.random.default_rng(5)), float), "a single draw must be a scalar"
    logging.warning("Successfully tested test_sampler_is_reproducible_and_shaped")


@pytest.mark.unit
def test_positive_moments():
    assert ig_moment(0, PARAMS) == 1.0
    assert ig_moment(1, PARAMS) == pytest.approx(PARAMS.mu, rel=1e-14)
    assert ig_moment(2, PARAMS) == pytest.approx(PARAMS.mu ** 2 + ig_variance(PARAMS), rel=1e-12)
    third = quadrature_expectation(lambda t: t ** 3, PARAMS)
    assert ig_moment(3, PARAMS) == pytest.approx(third, rel=1e-7)
    logging.warning("Successfully tested test_positive_moments")


@pytest.mark.unit
@pytest.mark.parametrize("order", [1, 2, 3])
def test_negative_moments_match_quadrature(order):
    closed_form = ig_negative_moment(order, PARAMS)
    integrated = quadrature_expectation(lambda t: t ** -order, PARAMS)
    assert closed_form == pytest.approx(integrated, rel=1e-8), f"E[T^-{order}] {closed_form} vs {integrated}"
    logging.warning(f"Successfully tested test_negative_moments_match_quadrature order={order}")


@pytest.mark.unit
def test_negative_moment_order_out_of_range():
    with pytest.raises(UnsupportedMomentOrder) as error:
        ig_negative_moment(4, PARAMS)
    assert error.value.order == 4, "order was not recorded on the exception"
    logging.warning("Successfully tested test_negative_moment_order_out_of_range")


@pytest.mark.unit
def test_mode_maximizes_density():
    mode = ig_mode(PARAMS)
    assert mode == pytest.approx(2.554, abs=1e-3), f"mode was {mode}"
    peak = float(ig_pdf(mode, PARAMS))
    assert peak > float(ig_pdf(mode - 1e-3, PARAMS)) and peak > float(ig_pdf(mode + 1e-3, PARAMS))
    logging.warning("Successfully tested test_mode_maximizes_density")


@pytest.mark.unit
def test_crlb_single_molecule_value():
    bound = crlb(1, PARAMS)
    assert bound == pytest.approx(2.962, abs=1e-3), f"crlb(1) was {bound}"
    information = fisher_info_quadrature(PARAMS)
    assert fisher_info_per_molecule(PARAMS) == pytest.approx(information, rel=1e-6)
    logging.warning(f"Successfully tested test_crlb_single_molecule_value crlb(1)={bound}")


@pytest.mark.unit
def test_crlb_scales_exactly_with_molecule_count():
    single = crlb(1, PARAMS)
    for n in range(1, 13):
        assert crlb(n, PARAMS) == single / n, f"crlb({n}) is not crlb(1)/{n}"
    logging.warning("Successfully tested test_crlb_scales_exactly_with_molecule_count")


@pytest.mark.unit
def test_crlb_needs_a_molecule():
    with pytest.raises(ValueError):
        crlb(0, PARAMS)
    logging.warning("Successfully tested test_crlb_needs_a_molecule")
