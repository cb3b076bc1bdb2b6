import numpy as np
import pytest
from scipy.stats import multivariate_normal

from core.errors import SamplerDivergedError, ScheduleError
from core.sampler import (
    compute_guidance, ddpm_step, dps_guidance, exact_guidance, guided_score, make_schedule,
    particle_generators, pigdm_guidance, sample_nonblind, schedule_from_config,
)
from core.score_models import GmmPrior, StationaryGaussianPrior, analytic_posterior
from core.tensor_ops import circular_convolve, fft2, ifft2
from models.kernel import BlurKernel
from models.settings import GuidanceKind, ScheduleConfig

from conftest import operator_matrix, random_simplex_kernel


@pytest.fixture
def tiny_prior():
    return StationaryGaussianPrior.from_power_law(4, 4, 1, mean=0.5, pixel_std=0.25, exponent=1.0)


def test_single_step_schedule():
    schedule = make_schedule(1, 0.5, 0.5)
    np.testing.assert_allclose(schedule.alpha_bar, [1.0, 0.5])
    assert schedule.sigma_tilde[1] == 0.0
    assert list(schedule.timesteps()) == [1]


def test_standard_schedule_reaches_noise():
    schedule = make_schedule(1000, 1e-4, 0.02)
    assert schedule.alpha_bar[1000] < 5e-5
    assert np.all(np.diff(schedule.alpha_bar) < 0)
    np.testing.assert_allclose(schedule.zeta, np.sqrt(schedule.alpha_bar))
    np.testing.assert_allclose(schedule.r, np.sqrt(1.0 - schedule.alpha_bar))


def test_schedule_modes():
    schedule = make_schedule(10, 1e-3, 0.3, sigma_tilde_mode="beta", zeta_mode="one", r_mode="zero")
    np.testing.assert_allclose(schedule.sigma_tilde[1:], np.sqrt(schedule.beta[1:]))
    np.testing.assert_array_equal(schedule.zeta, np.ones(11))
    np.testing.assert_array_equal(schedule.r, np.zeros(11))


@pytest.mark.parametrize("bad", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.1, 0.01), (10, 1e-4, 1.0)])
def test_invalid_schedule_is_rejected(bad):
    with pytest.raises(ScheduleError):
        make_schedule(*bad)


def test_unknown_mode_is_rejected():
    with pytest.raises(ScheduleError, match="zeta"):
        make_schedule(10, 1e-3, 0.3, zeta_mode="half")


def test_schedule_from_config():
    schedule = schedule_from_config(ScheduleConfig(T=20, beta_min=1e-3, beta_max=0.2))
    assert schedule.T == 20
    assert schedule.to_dict()["beta_max"] == pytest.approx(0.2)


def test_dps_vanishes_when_residual_is_zero(rng, small_prior, short_schedule):
    kernel = random_simplex_kernel(rng, 3)
    x = rng.normal(size=(8, 8, 1))
    y = circular_convolve(small_prior.xhat0(x, 20, short_schedule), kernel)
    g = dps_guidance(x, 20, y, kernel, 0.05, small_prior, short_schedule)
    np.testing.assert_allclose(g, 0.0, atol=1e-8)


def test_dps_is_gradient_of_weighted_residual(rng, tiny_prior, short_schedule):
    t, sigma = 18, 0.1
    kernel = random_simplex_kernel(rng, 3)
    y = rng.uniform(size=(4, 4, 1))
    x = rng.normal(size=(4, 4, 1))

    def loss(z):
        r = y - circular_convolve(tiny_prior.xhat0(z, t, short_schedule), kernel)
        return -np.sum(r ** 2) / sigma ** 2

    expected = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[idx] = 1e-6
        expected[idx] = (loss(x + step) - loss(x - step)) / 2e-6
    g = dps_guidance(x, t, y, kernel, sigma, tiny_prior, short_schedule)
    np.testing.assert_allclose(g, expected, rtol=1e-5, atol=1e-5)


def test_pigdm_without_spread_is_half_dps(rng, small_prior):
    schedule = make_schedule(50, 1e-4, 0.2, r_mode="zero")
    kernel = random_simplex_kernel(rng, 5)
    x = rng.normal(size=(8, 8, 1))
    y = rng.uniform(size=(8, 8, 1))
    dps = dps_guidance(x, 30, y, kernel, 0.05, small_prior, schedule)
    pigdm = pigdm_guidance(x, 30, y, kernel, 0.05, small_prior, schedule)
    np.testing.assert_allclose(dps, 2.0 * pigdm, rtol=1e-10, atol=1e-10)


def test_pigdm_with_delta_kernel_is_rescaled_dps(rng, small_prior, short_schedule):
    t, sigma = 25, 0.1
    x = rng.normal(size=(8, 8, 1))
    y = rng.uniform(size=(8, 8, 1))
    r2 = short_schedule.r[t] ** 2
    delta = BlurKernel.delta(3)
    pigdm = pigdm_guidance(x, t, y, delta, sigma, small_prior, short_schedule)
    dps = dps_guidance(x, t, y, delta, sigma, small_prior, short_schedule)
    np.testing.assert_allclose(pigdm * (r2 + sigma ** 2), 0.5 * sigma ** 2 * dps, atol=1e-10)


def test_pigdm_matches_dense_solve(rng, tiny_prior, short_schedule):
    t, sigma = 12, 0.05
    kernel = random_simplex_kernel(rng, 3)
    y = rng.uniform(size=(4, 4, 1))
    x = rng.normal(size=(4, 4, 1))
    r2 = short_schedule.r[t] ** 2
    H = operator_matrix(lambda e: circular_convolve(e, kernel), (4, 4, 1))
    JT = operator_matrix(lambda v: tiny_prior.jvp_xhat0(x, t, v, short_schedule), (4, 4, 1))
    residual = y.ravel() - H @ tiny_prior.xhat0(x, t, short_schedule).ravel()
    expected = JT @ H.T @ np.linalg.solve(r2 * H @ H.T + sigma ** 2 * np.eye(16), residual)
    g = pigdm_guidance(x, t, y, kernel, sigma, tiny_prior, short_schedule)
    np.testing.assert_allclose(g.ravel(), expected, atol=1e-8)


def test_exact_guidance_is_gradient_of_likelihood(rng, tiny_prior, short_schedule):
    t, sigma = 22, 0.08
    kernel = random_simplex_kernel(rng, 3)
    y = rng.uniform(size=(4, 4, 1))
    x = rng.normal(size=(4, 4, 1))
    H = operator_matrix(lambda e: circular_convolve(e, kernel), (4, 4, 1))
    spectrum = tiny_prior.x0_variance_spectrum(t, short_schedule)
    C = operator_matrix(lambda e: ifft2(fft2(e) * spectrum), (4, 4, 1))
    cov = H @ C @ H.T + sigma ** 2 * np.eye(16)
    cov = 0.5 * (cov + cov.T)

    def loglik(z):
        mean = H @ tiny_prior.xhat0(z, t, short_schedule).ravel()
        return multivariate_normal(mean, cov).logpdf(y.ravel())

    expected = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[idx] = 1e-6
        expected[idx] = (loglik(x + step) - loglik(x - step)) / 2e-6
    g = exact_guidance(x, t, y, kernel, sigma, tiny_prior, short_schedule)
    np.testing.assert_allclose(g, expected, rtol=1e-5, atol=1e-5)


def test_exact_guidance_needs_closed_form_covariance(rng, short_schedule):
    gmm = GmmPrior(rng.uniform(size=(2, 4, 4, 1)), variance=0.05)
    with pytest.raises(ValueError, match="exact guidance"):
        compute_guidance(GuidanceKind.EXACT, np.zeros((4, 4, 1)), 5, np.zeros((4, 4, 1)), BlurKernel.delta(3),
                         0.1, gmm, short_schedule)


def test_guidance_rejects_zero_noise(small_prior, short_schedule):
    with pytest.raises(ValueError, match="sigma"):
        dps_guidance(np.zeros((8, 8, 1)), 5, np.zeros((8, 8, 1)), BlurKernel.delta(3), 0.0, small_prior,
                     short_schedule)


def test_ddpm_last_step_is_deterministic_rescale(rng, short_schedule):
    x = rng.normal(size=(4, 4, 1))
    out = ddpm_step(x, 1, np.zeros_like(x), short_schedule, rng)
    np.testing.assert_allclose(out, x / np.sqrt(short_schedule.alpha[1]))


def test_ddpm_step_adds_scaled_noise(rng, short_schedule):
    x = rng.normal(size=(4, 4, 1))
    s = rng.normal(size=(4, 4, 1))
    t = 10
    z = np.random.default_rng(5).standard_normal(x.shape)
    out = ddpm_step(x, t, s, short_schedule, np.random.default_rng(5))
    expected = (x + short_schedule.beta[t] * s) / np.sqrt(short_schedule.alpha[t]) + short_schedule.sigma_tilde[t] * z
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_ddpm_step_rejects_t_zero(short_schedule):
    with pytest.raises(ScheduleError):
        ddpm_step(np.zeros((2, 2, 1)), 0, np.zeros((2, 2, 1)), short_schedule, np.random.default_rng(0))


def test_guided_score_combines_terms(short_schedule):
    eps = np.ones((2, 2, 1))
    g = np.full((2, 2, 1), 2.0)
    expected = short_schedule.zeta[7] * 2.0 - 1.0 / np.sqrt(1.0 - short_schedule.alpha_bar[7])
    np.testing.assert_allclose(guided_score(eps, g, 7, short_schedule), expected)


def test_particle_streams_do_not_depend_on_count():
    a = particle_generators(7, 3)[1].standard_normal(4)
    b = particle_generators(7, 5)[1].standard_normal(4)
    np.testing.assert_array_equal(a, b)


def test_sampler_is_deterministic_per_particle(rng, small_prior, short_schedule):
    kernel = random_simplex_kernel(rng, 3)
    y = rng.uniform(size=(8, 8, 1))
    a = sample_nonblind(y, 0.05, kernel, 3, short_schedule, GuidanceKind.PIGDM, small_prior, rng=11)
    b = sample_nonblind(y, 0.05, kernel, 3, short_schedule, "pigdm", small_prior, rng=11)
    c = sample_nonblind(y, 0.05, kernel, 2, short_schedule, GuidanceKind.PIGDM, small_prior, rng=11)
    np.testing.assert_array_equal(a.particles, b.particles)
    np.testing.assert_allclose(a.particles[:2], c.particles, atol=1e-12)
    assert a.stream_ids == [0, 1, 2]
    assert np.all(np.isfinite(a.particles))


def test_sampler_rejects_empty_ensemble(small_prior, short_schedule):
    with pytest.raises(ValueError):
        sample_nonblind(np.zeros((8, 8, 1)), 0.05, BlurKernel.delta(3), 0, short_schedule, "dps", small_prior, rng=0)


def test_overweighted_dps_raises_divergence(rng, small_prior, short_schedule):
    y = rng.uniform(size=(8, 8, 1))
    with pytest.raises(SamplerDivergedError) as info:
        sample_nonblind(y, 0.05, BlurKernel.gaussian(3, 0.8), 2, short_schedule, GuidanceKind.DPS, small_prior,
                        rng=0, dps_weight=1e8)
    assert info.value.guidance == "dps"
    assert 1 <= info.value.t <= short_schedule.T
    assert "dps" in str(info.value)


def test_default_weight_dps_stays_finite_at_moderate_noise(rng, small_prior):
    schedule = make_schedule(1000, 1e-4, 0.02)
    kernel = BlurKernel.gaussian(3, 0.8)
    sigma = 0.1
    truth = small_prior.sample(rng)
    y = circular_convolve(truth, kernel) + sigma * rng.normal(size=truth.shape)
    ensemble = sample_nonblind(y, sigma, kernel, 2, schedule, GuidanceKind.DPS, small_prior, rng=6)
    assert np.all(np.isfinite(ensemble.particles))
    assert np.abs(ensemble.particles).max() < 10.0


@pytest.mark.slow
def test_unguided_sampler_draws_from_the_prior(small_prior):
    schedule = make_schedule(1000, 1e-4, 0.02, sigma_tilde_mode="beta")
    # σ が巨大なのでガイダンスは実質ゼロ
    ensemble = sample_nonblind(np.zeros((8, 8, 1)), 1e6, BlurKernel.delta(3), 300, schedule, GuidanceKind.PIGDM,
                               small_prior, rng=3)
    pixels = ensemble.particles.ravel()
    assert pixels.mean() == pytest.approx(0.5, abs=0.05)
    assert pixels.var() == pytest.approx(0.04, rel=0.25)


@pytest.mark.slow
def test_exact_guidance_samples_the_posterior(rng, small_prior):
    schedule = make_schedule(1000, 1e-4, 0.02, zeta_mode="one")
    kernel = BlurKernel.gaussian(3, 0.8)
    sigma = 0.05
    truth = small_prior.sample(rng)
    y = circular_convolve(truth, kernel) + sigma * rng.normal(size=truth.shape)
    n = 2000
    ensemble = sample_nonblind(y, sigma, kernel, n, schedule, GuidanceKind.EXACT, small_prior, rng=4)
    mean, variance = analytic_posterior(y, kernel, sigma, small_prior)
    tol = 4 * np.sqrt(variance.mean() / n) + 0.01
    assert np.abs(ensemble.mean() - mean).mean() < tol
    # 周波数ごとの分散: E|X̂ − mean̂|² = HW·v(ω)
    freq = fft2(ensemble.particles)
    empirical = np.mean(np.abs(freq - freq.mean(axis=0)) ** 2, axis=0) / (8 * 8)
    np.testing.assert_allclose(empirical, variance, rtol=0.25)
