"""
Kernel M-step: Fourier-domain data solves inside a half-quadratic
splitting (HQS) loop, and the kernel regularizers it alternates with.
"""

from abc import ABC, abstractmethod
from typing import List, Optional, Union

import numpy as np
import structlog

from models.ensemble import ParticleEnsemble
from models.kernel import BlurKernel
from models.log import HqsRecord
from models.settings import MStepConfig, RegularizerKind
from .errors import RegularizerError, ShapeError
from .tensor_ops import KernelLike, crop_kernel, embed_kernel, fft2, kernel_array, project_simplex

logger = structlog.get_logger(__name__)

SamplesLike = Union[ParticleEnsemble, np.ndarray]


def _particles(samples: SamplesLike) -> np.ndarray:
    xs = samples.particles if isinstance(samples, ParticleEnsemble) else np.asarray(samples, dtype=np.float64)
    if xs.ndim == 3:
        xs = xs[None]
    if xs.ndim != 4 or xs.shape[0] < 1:
        raise ShapeError(f"Samples must be (n, H, W, C) with n >= 1, got {xs.shape}")
    return xs


def _solve_full(y: np.ndarray, xs: np.ndarray, kernel_grid: np.ndarray, sigma: float, beta_hqs: float,
                r2: float = 0.0) -> np.ndarray:
    """全グリッド上の z*（(0, 0) 中心座標）"""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0 (got {sigma})")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y[:, :, None]
    if y.shape != xs.shape[1:]:
        raise ShapeError(f"Observation {y.shape} and samples {xs.shape[1:]} differ")
    h, w, c = y.shape
    X = fft2(xs)
    Y = fft2(y)
    prior = sigma ** 2 * beta_hqs
    num = np.sum(Y[None] * np.conj(X), axis=(0, 3)) / xs.shape[0] + prior * embed_kernel(kernel_grid, h, w)
    den = np.sum(np.abs(X) ** 2, axis=(0, 3)) / xs.shape[0] + prior
    if r2 > 0:
        # E|F(x)|² − |F(x̂₀)|² = h·w·r² per channel
        den = den + c * h * w * r2
    return np.fft.ifft2(num / den).real


def fourier_data_solve(y: np.ndarray, samples: SamplesLike, K_j: KernelLike, sigma: float, beta_hqs: float,
                       crop: bool = True) -> np.ndarray:
    """
    arg min_Z (1/(2nσ²)) Σ_i ‖y − Z xⁱ‖² + (β/2)‖Z − K_j‖², solved per
    frequency over all circulant Z. Channels and particles both add to the
    sums. The result is cropped to the k×k window of K_j unless crop=False,
    in which case the full (H, W) grid is returned with its center at (0, 0).
    """
    grid = kernel_array(K_j)
    full = _solve_full(y, _particles(samples), grid, sigma, beta_hqs)
    return crop_kernel(full, grid.shape[0]) if crop else full


def fast_solve_dps(y: np.ndarray, xhat0s: SamplesLike, K: KernelLike, sigma: float, beta_hqs: float,
                   crop: bool = True) -> np.ndarray:
    """x̂₀ⁱ(t) をサンプルの代わりに使うデータ解"""
    return fourier_data_solve(y, xhat0s, K, sigma, beta_hqs, crop=crop)


def fast_solve_pigdm(y: np.ndarray, xhat0s: SamplesLike, K: KernelLike, sigma: float, beta_hqs: float,
                     r_t: float, crop: bool = True) -> np.ndarray:
    """
    Same solve with the sample spread N(x̂₀, r_t²I) integrated out, which
    adds r_t² (times the per-bin energy h·w·C) to the denominator.
    """
    if r_t < 0:
        raise ValueError(f"r_t must be >= 0 (got {r_t})")
    grid = kernel_array(K)
    full = _solve_full(y, _particles(xhat0s), grid, sigma, beta_hqs, r2=float(r_t) ** 2)
    return crop_kernel(full, grid.shape[0]) if crop else full


class KernelRegularizer(ABC):
    """Φ とその近接写像 𝒟_s"""

    name = "regularizer"

    @abstractmethod
    def denoise(self, v: np.ndarray, s: float) -> np.ndarray:
        ...

    def penalty(self, kernel: np.ndarray) -> float:
        """Φ(K)。定義を持たない正則化（PnP）は 0"""
        return 0.0


class IdentityRegularizer(KernelRegularizer):
    name = RegularizerKind.IDENTITY.value

    def denoise(self, v, s):
        return np.array(v, dtype=np.float64)


class L2Regularizer(KernelRegularizer):
    """Φ(K) = ½‖K‖², prox v/(1+s²)"""

    name = RegularizerKind.L2.value

    def denoise(self, v, s):
        return np.asarray(v, dtype=np.float64) / (1.0 + s ** 2)

    def penalty(self, kernel):
        return 0.5 * float(np.sum(np.asarray(kernel) ** 2))


class L1Regularizer(KernelRegularizer):
    """Φ(K) = ‖K‖₁, soft-threshold at s²"""

    name = RegularizerKind.L1.value

    def denoise(self, v, s):
        v = np.asarray(v, dtype=np.float64)
        return np.sign(v) * np.maximum(np.abs(v) - s ** 2, 0.0)

    def penalty(self, kernel):
        return float(np.sum(np.abs(kernel)))


class PnPRegularizer(KernelRegularizer):
    """
    Plug-and-play step with a learned kernel denoiser. Kernels smaller than
    the training canvas are centered in it, denoised and cropped back.
    """

    name = RegularizerKind.PNP.value

    def __init__(self, denoiser, canvas: int):
        self.denoiser = denoiser
        self.canvas = canvas

    def denoise(self, v, s):
        v = np.asarray(v, dtype=np.float64)
        k = v.shape[0]
        if k >= self.canvas:
            return self.denoiser.denoise(v, s)
        off = (self.canvas - k) // 2
        padded = np.zeros((self.canvas, self.canvas))
        padded[off:off + k, off:off + k] = v
        out = self.denoiser.denoise(padded, s)
        return out[off:off + k, off:off + k]


def make_regularizer(kind: Union[str, RegularizerKind], denoiser=None, canvas: Optional[int] = None) -> KernelRegularizer:
    """名前から正則化オブジェクトを生成"""
    kind = RegularizerKind(kind) if isinstance(kind, str) else kind
    if kind == RegularizerKind.IDENTITY:
        return IdentityRegularizer()
    if kind == RegularizerKind.L1:
        return L1Regularizer()
    if kind == RegularizerKind.L2:
        return L2Regularizer()
    if denoiser is None:
        raise ValueError("The pnp regularizer needs trained denoiser weights (--weights)")
    return PnPRegularizer(denoiser, canvas or denoiser.canvas)


def data_objective(y: np.ndarray, samples: SamplesLike, kernel: KernelLike, sigma: float) -> float:
    """(1/(2nσ²)) Σ_i ‖y − K xⁱ‖²"""
    xs = _particles(samples)
    h, w = xs.shape[1:3]
    spectrum = embed_kernel(kernel, h, w)[:, :, None]
    return _fourier_data_objective(y, xs, spectrum, sigma)


def _fourier_data_objective(y, xs, spectrum, sigma, r2: float = 0.0) -> float:
    h, w, c = xs.shape[1:]
    residual = fft2(y)[None] - spectrum * fft2(xs)
    value = np.sum(np.abs(residual) ** 2) / (h * w) / xs.shape[0]
    if r2 > 0:
        value += c * r2 * np.sum(np.abs(spectrum[:, :, 0]) ** 2)
    return float(value / (2.0 * sigma ** 2))


def mstep_objective(y: np.ndarray, samples: SamplesLike, kernel: KernelLike, sigma: float, lam: float,
                    regularizer: KernelRegularizer) -> float:
    """データ項 + λΦ(K)"""
    return data_objective(y, samples, kernel, sigma) + lam * regularizer.penalty(kernel_array(kernel))


def _split_objective(y, xs, z_full, kernel_grid, sigma, lam, beta_hqs, regularizer, r2) -> float:
    h, w = xs.shape[1:3]
    z_hat = np.fft.fft2(z_full)
    k_full = np.fft.ifft2(embed_kernel(kernel_grid, h, w)).real
    coupling = 0.5 * beta_hqs * float(np.sum((z_full - k_full) ** 2))
    return (_fourier_data_objective(y, xs, z_hat[:, :, None], sigma, r2)
            + lam * regularizer.penalty(kernel_grid) + coupling)


def hqs_mstep(y: np.ndarray, ensemble: SamplesLike, sigma: float, config: MStepConfig, K_init: KernelLike,
              regularizer: Optional[KernelRegularizer] = None, r_t: float = 0.0,
              trace: Optional[List[HqsRecord]] = None) -> BlurKernel:
    """
    J alternations of the data solve and the regularizer prox at strength
    √(λ/β), each prox optionally followed by simplex projection.

    r_t > 0 selects the ΠGDM data solve. When a trace list is given, one
    HqsRecord per iteration is appended with the data-plus-penalty value at
    K_j and the split objective f(Z_j) + λΦ(K_j) + β/2‖Z_j − K_j‖².
    """
    regularizer = regularizer or make_regularizer(config.regularizer)
    xs = _particles(ensemble)
    K = np.array(kernel_array(K_init), dtype=np.float64)
    k = K.shape[0]
    s = config.strength
    r2 = float(r_t) ** 2

    for j in range(1, config.J + 1):
        z_full = _solve_full(y, xs, K, sigma, config.beta_hqs, r2=r2)
        Z = crop_kernel(z_full, k)
        try:
            K = regularizer.denoise(Z, s)
            if config.project_simplex:
                K = project_simplex(K)
        except Exception as e:
            raise RegularizerError(j, e) from e
        if K.shape != Z.shape or not np.all(np.isfinite(K)):
            raise RegularizerError(j, ValueError(f"non-finite or misshaped output {K.shape}"))
        if trace is not None:
            trace.append(HqsRecord(
                iteration=j,
                objective=data_objective(y, xs, K, sigma) + config.lam * regularizer.penalty(K),
                split_objective=_split_objective(y, xs, z_full, K, sigma, config.lam, config.beta_hqs,
                                                 regularizer, r2),
            ))

    logger.debug("mstep_done", iters=config.J, regularizer=regularizer.name, r_t=float(r_t))
    try:
        return BlurKernel.normalized(K)
    except ValueError as e:
        raise RegularizerError(config.J, e) from e
