"""
Shared fixtures for the diffem test suite
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from config import Config  # noqa: E402
from core.degrade import sample_kernel_bank  # noqa: E402
from core.denoiser import DenoiserNet, train  # noqa: E402
from core.sampler import make_schedule  # noqa: E402
from core.score_models import StationaryGaussianPrior  # noqa: E402
from models.kernel import BlurKernel  # noqa: E402
from models.settings import TrainConfig  # noqa: E402

settings.register_profile("ci", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=15, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dev"))

Config.SHOW_PROGRESS = False


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_image(rng):
    """16×16 単チャンネル画像"""
    return rng.uniform(0.0, 1.0, size=(16, 16, 1))


@pytest.fixture
def random_kernel(rng):
    """5×5 ランダムカーネル"""
    return BlurKernel.normalized(rng.uniform(0.0, 1.0, size=(5, 5)))


@pytest.fixture
def short_schedule():
    return make_schedule(50, 1e-4, 0.2)


@pytest.fixture
def small_prior():
    """8×8 の定常ガウス事前分布"""
    return StationaryGaussianPrior.from_power_law(8, 8, 1, mean=0.5, pixel_std=0.2, exponent=1.0)


def random_simplex_kernel(rng, size):
    return BlurKernel.normalized(rng.uniform(0.0, 1.0, size=(size, size)))


def convolution_matrix(image_channel: np.ndarray) -> np.ndarray:
    """
    Dense (HW × HW) matrix A with A @ vec(z) = vec(image ⊛ z) for a full-grid
    kernel z stored with its center at (0, 0).
    """
    h, w = image_channel.shape
    X = np.fft.fft2(image_channel)
    cols = []
    for j in range(h * w):
        e = np.zeros(h * w)
        e[j] = 1.0
        cols.append(np.fft.ifft2(X * np.fft.fft2(e.reshape(h, w))).real.ravel())
    return np.stack(cols, axis=1)


def operator_matrix(fn, shape) -> np.ndarray:
    """Dense matrix of a linear map acting on arrays of the given shape."""
    n = int(np.prod(shape))
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(np.asarray(fn(e.reshape(shape))).ravel())
    return np.stack(cols, axis=1)


@pytest.fixture(scope="session")
def trained_denoiser():
    """11×11 モーションカーネルで学習した小さなデノイザーと monitor loss 履歴"""
    config = TrainConfig(sigma_range=(0.0, 0.03), steps=1500, batch_size=8, learning_rate=1e-2, seed=0, canvas=11,
                         kernel_sizes=(11,), dataset_size=256, monitor_size=16)
    kernels = sample_kernel_bank(config.dataset_size, config.kernel_sizes, np.random.default_rng(5))
    net = DenoiserNet.initialize(np.random.default_rng(6), blocks=5, channels=16, canvas=config.canvas)
    return train(kernels, config, net=net)
