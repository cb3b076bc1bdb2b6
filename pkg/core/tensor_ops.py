"""
Tensor arithmetic underpinning every diffem module

Images are float64 arrays shaped (H, W, C), optionally with leading batch
axes (n, H, W, C). Spectra are complex128 arrays of the same shape.
Boundary handling is circular everywhere; the forward FFT is
unnormalized and the inverse carries 1/(HW).
"""

from typing import Tuple, Union

import numpy as np

from models.kernel import BlurKernel
from .errors import ShapeError

KernelLike = Union[BlurKernel, np.ndarray]

# 空間軸（バッチ次元を許すため末尾から数える）
SPATIAL_AXES = (-3, -2)


def as_image(x) -> np.ndarray:
    """(H, W) / (H, W, C) 入力を float64 の (H, W, C) に揃える"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim < 3:
        raise ShapeError(f"Image must have at least 2 dims, got shape {arr.shape}")
    if min(arr.shape[-3:]) < 1:
        raise ShapeError(f"Image dims must be >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("Image contains non-finite entries")
    return arr


def kernel_array(kernel: KernelLike) -> np.ndarray:
    """BlurKernel または (k, k) グリッドを ndarray として取り出す"""
    if isinstance(kernel, BlurKernel):
        return kernel.data
    arr = np.asarray(kernel, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ShapeError(f"Kernel grid must be 2-D, got shape {arr.shape}")
    return arr


def fft2(image: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D DFT over the spatial axes."""
    return np.fft.fft2(np.asarray(image, dtype=np.float64), axes=SPATIAL_AXES)


def ifft2(freq: np.ndarray, real: bool = True) -> np.ndarray:
    """Inverse 2-D DFT (carries 1/(HW)); returns the real part by default."""
    out = np.fft.ifft2(freq, axes=SPATIAL_AXES)
    return out.real if real else out


def embed_kernel(kernel: KernelLike, h: int, w: int) -> np.ndarray:
    """
    カーネルを h×w にゼロパディングし、中心 (k//2, k//2) を (0, 0) へ
    循環シフトしてから変換する。戻り値は (h, w) の複素スペクトル。
    """
    grid = kernel_array(kernel)
    kh, kw = grid.shape
    if kh > h or kw > w:
        raise ShapeError(f"kernel exceeds image support ({kh}x{kw} > {h}x{w})")
    padded = np.zeros((h, w), dtype=np.float64)
    padded[:kh, :kw] = grid
    padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(padded)


def crop_kernel(grid: np.ndarray, k: int) -> np.ndarray:
    """embed_kernel の逆: (0, 0) 中心のグリッドから k×k 窓を切り出す"""
    h, w = grid.shape
    if k > min(h, w):
        raise ShapeError(f"kernel exceeds image support ({k} > {min(h, w)})")
    c = k // 2
    return np.roll(grid, (c, c), axis=(0, 1))[:k, :k].copy()


def apply_spectrum(image: np.ndarray, spectrum: np.ndarray) -> np.ndarray:
    """Multiply every channel (and batch item) by a (H, W) spectrum."""
    return ifft2(fft2(image) * spectrum[:, :, None])


def circular_convolve(image: np.ndarray, kernel: KernelLike) -> np.ndarray:
    """チャンネルごとの循環畳み込み Hx"""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-3], image.shape[-2]
    return apply_spectrum(image, embed_kernel(kernel, h, w))


def circular_correlate(image: np.ndarray, kernel: KernelLike) -> np.ndarray:
    """Adjoint Hᵀy, realized with the conjugate spectrum."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-3], image.shape[-2]
    return apply_spectrum(image, np.conj(embed_kernel(kernel, h, w)))


def inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(np.asarray(a) * np.asarray(b)))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """
    Euclidean projection onto the probability simplex (sort-based).

    Works on the flattened input and returns the same shape.
    """
    arr = np.asarray(v, dtype=np.float64)
    flat = arr.ravel()
    n = flat.size
    u = np.sort(flat)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    active = u - css / ind > 0
    rho = ind[active][-1]
    theta = css[active][-1] / rho
    return np.maximum(flat - theta, 0.0).reshape(arr.shape)


def frequency_grid(h: int, w: int) -> Tuple[np.ndarray, np.ndarray]:
    """Signed integer frequency indices (rows, cols) in FFT order."""
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    return np.meshgrid(fy, fx, indexing="ij")
