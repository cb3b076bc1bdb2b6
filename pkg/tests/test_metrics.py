import numpy as np
import pytest

from core.errors import ShapeError
from core.metrics import (
    kernel_mse, psnr, psnr_per_particle, psnr_sample_average, reblur_loss, reblur_per_particle,
)
from core.score_models import StationaryGaussianPrior, sample_analytic_posterior
from core.tensor_ops import circular_convolve
from models.ensemble import ParticleEnsemble
from models.kernel import BlurKernel


def test_psnr_of_identical_images_is_capped(random_image):
    assert psnr(random_image, random_image) == 99.0


def test_psnr_known_value():
    x = np.zeros((4, 4, 1))
    assert psnr(x + 0.5, x) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4, 1)), np.zeros((4, 4, 3)))


def test_sample_average_psnr_beats_particles_for_symmetric_noise(rng, random_image):
    noise = rng.normal(0.0, 0.1, size=random_image.shape)
    ensemble = ParticleEnsemble(np.stack([random_image + noise, random_image - noise]))
    assert psnr_sample_average(ensemble, random_image) == 99.0
    per_particle = psnr_per_particle(ensemble, random_image)
    assert len(per_particle) == 2
    assert per_particle[0] == pytest.approx(per_particle[1])
    assert per_particle[0] < 30


def test_kernel_mse_ignores_circular_shift(rng, random_kernel):
    shifted = BlurKernel(np.roll(random_kernel.data, (1, 2), axis=(0, 1)))
    assert kernel_mse(shifted, random_kernel) == 0.0


def test_kernel_mse_center_pads_smaller_kernel():
    assert kernel_mse(BlurKernel.delta(3), BlurKernel.delta(7)) == 0.0
    assert kernel_mse(BlurKernel.delta(7), BlurKernel.uniform(3)) > 0.0


def test_kernel_mse_known_value():
    a = BlurKernel.delta(3)
    b = BlurKernel.uniform(3)
    # 最良の位置合わせでもデルタと一様の差は (8/9)² + 8·(1/9)² を 9 で割った値
    expected = ((8 / 9) ** 2 + 8 * (1 / 9) ** 2) / 9
    assert kernel_mse(a, b) == pytest.approx(expected)


def test_reblur_of_exact_reconstruction_is_negative_noise_energy(random_image, random_kernel):
    y = circular_convolve(random_image, random_kernel)
    assert reblur_loss(y, random_image, random_kernel, 0.1) == pytest.approx(-0.01 * y.size, abs=1e-10)


def test_reblur_with_delta_kernel_is_residual_energy(rng):
    x = rng.uniform(size=(4, 4, 1))
    y = rng.uniform(size=(4, 4, 1))
    assert reblur_loss(y, x, BlurKernel.delta(3), 0.0) == pytest.approx(np.sum((x - y) ** 2))


def test_reblur_shape_mismatch():
    with pytest.raises(ShapeError):
        reblur_loss(np.zeros((4, 4, 1)), np.zeros((5, 4, 1)), BlurKernel.delta(3), 0.1)


def test_particle_reblur_adds_spread_to_mean_reblur(rng, random_kernel):
    particles = rng.uniform(size=(3, 16, 16, 1))
    y = rng.uniform(size=(16, 16, 1))
    ensemble = ParticleEnsemble(particles)
    spread = np.mean([np.sum(circular_convolve(p - ensemble.mean(), random_kernel) ** 2) for p in particles])
    per_particle = reblur_per_particle(y, ensemble, random_kernel, 0.1)
    assert len(per_particle) == 3
    assert np.mean(per_particle) == pytest.approx(reblur_loss(y, ensemble.mean(), random_kernel, 0.1) + spread)


def test_posterior_samples_reblur_to_the_noise_level(rng):
    prior = StationaryGaussianPrior.from_power_law(32, 32, 1, mean=0.5, pixel_std=0.2, exponent=1.5)
    kernel = BlurKernel.gaussian(5, 1.0)
    sigma = 0.02
    y = circular_convolve(prior.sample(rng), kernel) + sigma * rng.normal(size=(32, 32, 1))
    ensemble = ParticleEnsemble(sample_analytic_posterior(y, kernel, sigma, prior, rng, 16))
    noise_energy = sigma ** 2 * y.size
    assert abs(np.mean(reblur_per_particle(y, ensemble, kernel, sigma))) / noise_energy < 0.15
    # 事後平均は雑音を過小にしか説明しない
    assert reblur_loss(y, ensemble.mean(), kernel, sigma) < 0
