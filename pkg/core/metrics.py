"""
Restoration and kernel-estimation metrics
"""

from typing import List

import numpy as np

from models.ensemble import ParticleEnsemble
from .errors import ShapeError
from .tensor_ops import KernelLike, circular_convolve, kernel_array

PSNR_CAP = 99.0
MSE_FLOOR = 1e-10


def psnr(x: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """10·log10(peak²/MSE)、MSE < 1e-10 なら 99 dB"""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(f"psnr: shape mismatch {x.shape} vs {ref.shape}")
    mse = float(np.mean((x - ref) ** 2))
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return float(10.0 * np.log10(peak ** 2 / mse))


def psnr_sample_average(ensemble: ParticleEnsemble, ref: np.ndarray) -> float:
    """粒子平均画像の PSNR"""
    return psnr(ensemble.mean(), ref)


def psnr_per_particle(ensemble: ParticleEnsemble, ref: np.ndarray) -> List[float]:
    return [psnr(p, ref) for p in ensemble.particles]


def _center_pad(grid: np.ndarray, size: int) -> np.ndarray:
    k = grid.shape[0]
    off = (size - k) // 2
    out = np.zeros((size, size))
    out[off:off + k, off:off + k] = grid
    return out


def kernel_mse(estimate: KernelLike, reference: KernelLike) -> float:
    """
    Per-entry MSE after center-padding both kernels to the larger size and
    registering them with the best circular shift (exhaustive search).
    """
    a = kernel_array(estimate)
    b = kernel_array(reference)
    size = max(a.shape[0], b.shape[0])
    a = _center_pad(a, size)
    b = _center_pad(b, size)
    best = np.inf
    for dy in range(size):
        for dx in range(size):
            best = min(best, float(np.mean((np.roll(a, (dy, dx), axis=(0, 1)) - b) ** 2)))
    return best


def reblur_loss(y: np.ndarray, x_hat: np.ndarray, kernel: KernelLike, sigma: float) -> float:
    """‖Ĥx̂ − y‖² − σ²M、M は y の要素数（負にもなりうる）"""
    y = np.asarray(y, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if y.shape != x_hat.shape:
        raise ShapeError(f"reblur_loss: shape mismatch {y.shape} vs {x_hat.shape}")
    residual = circular_convolve(x_hat, kernel) - y
    return float(np.sum(residual ** 2) - sigma ** 2 * y.size)


def reblur_per_particle(y: np.ndarray, ensemble: ParticleEnsemble, kernel: KernelLike, sigma: float) -> List[float]:
    """粒子ごとの reblur_loss。事後サンプルなら期待値は 0 付近"""
    return [reblur_loss(y, p, kernel, sigma) for p in ensemble.particles]
