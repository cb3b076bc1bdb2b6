"""
Score / noise-predictor models consumed by the samplers

All models accept images shaped (..., H, W, C) so a whole particle batch
is evaluated in one call. The analytic priors have tractable marginals at
every diffusion time, which makes them exact oracles for the samplers.
"""

from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np
import structlog
from scipy.special import logsumexp

from models.ensemble import DiffusionSchedule
from .errors import DegenerateFrequencyError, ScheduleError, ShapeError
from .tensor_ops import KernelLike, embed_kernel, fft2, frequency_grid, ifft2

logger = structlog.get_logger(__name__)


def _alpha_bar(schedule: DiffusionSchedule, t: int) -> float:
    if not 0 <= t <= schedule.T:
        raise ScheduleError(f"timestep {t} outside [0, {schedule.T}]")
    return float(schedule.alpha_bar[t])


def xhat0_from_eps(x_t: np.ndarray, t: int, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """x̂₀ = (x_t − √(1−ᾱ_t)·ε)/√ᾱ_t"""
    ab = _alpha_bar(schedule, t)
    if ab <= 0:
        raise ScheduleError(f"alpha_bar[{t}] = {ab} <= 0")
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def score_from_eps(x_t: np.ndarray, t: int, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """Tweedie: s = −ε/√(1−ᾱ_t)"""
    ab = _alpha_bar(schedule, t)
    if 1.0 - ab <= 0:
        raise ScheduleError(f"alpha_bar[{t}] = 1 (zero noise): score undefined")
    return -np.asarray(eps) / np.sqrt(1.0 - ab)


def eps_from_score(score: np.ndarray, t: int, schedule: DiffusionSchedule) -> np.ndarray:
    ab = _alpha_bar(schedule, t)
    return -np.sqrt(1.0 - ab) * score


class ScoreModel(ABC):
    """ε(x_t, t) と (∂x̂₀/∂x_t)ᵀ v を提供する抽象モデル"""

    @abstractmethod
    def predict_eps(self, x_t: np.ndarray, t: int, schedule: DiffusionSchedule) -> np.ndarray:
        ...

    def jvp_xhat0(self, x_t: np.ndarray, t: int, v: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
        """Scalar surrogate (∂x̂₀/∂x_t)ᵀ ≈ I/√ᾱ_t; analytic models override it."""
        return np.asarray(v) / np.sqrt(_alpha_bar(schedule, t))

    def xhat0(self, x_t: np.ndarray, t: int, schedule: DiffusionSchedule) -> np.ndarray:
        return xhat0_from_eps(x_t, t, self.predict_eps(x_t, t, schedule), schedule)

    def score(self, x_t: np.ndarray, t: int, schedule: DiffusionSchedule) -> np.ndarray:
        return score_from_eps(x_t, t, self.predict_eps(x_t, t, schedule), schedule)


class SurrogateJacobianModel(ScoreModel):
    """既存モデルの ε をそのまま使い、ヤコビアンだけ I/√ᾱ_t に置き換える"""

    def __init__(self, inner: ScoreModel):
        self.inner = inner

    def predict_eps(self, x_t, t, schedule):
        return self.inner.predict_eps(x_t, t, schedule)

    def jvp_xhat0(self, x_t, t, v, schedule):
        return ScoreModel.jvp_xhat0(self, x_t, t, v, schedule)

    def __getattr__(self, name):
        return getattr(self.inner, name)


class StationaryGaussianPrior(ScoreModel):
    """
    x₀ ~ N(μ, Σ) with Σ diagonal in the Fourier basis, eigenvalues Σ̂(ω) per
    channel. p(x_t) = N(√ᾱ μ, ᾱΣ + (1−ᾱ)I) is again Fourier-diagonal.
    """

    def __init__(self, mean: np.ndarray, spectrum: np.ndarray):
        mean = np.asarray(mean, dtype=np.float64)
        if mean.ndim == 2:
            mean = mean[:, :, None]
        spectrum = np.asarray(spectrum)
        if np.iscomplexobj(spectrum):
            if np.max(np.abs(spectrum.imag)) > 0:
                raise ValueError("Covariance spectrum must be real")
            spectrum = spectrum.real
        spectrum = np.asarray(spectrum, dtype=np.float64)
        if spectrum.ndim == 2:
            spectrum = np.broadcast_to(spectrum[:, :, None], mean.shape)
        if spectrum.shape != mean.shape:
            raise ShapeError(f"Spectrum shape {spectrum.shape} does not match mean {mean.shape}")
        if not np.all(np.isfinite(spectrum)) or np.any(spectrum < 0):
            raise ValueError("Covariance spectrum must be finite and non-negative")
        self.mean = mean
        self.spectrum = np.array(spectrum)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.mean.shape

    @classmethod
    def from_power_law(cls, h: int, w: int, c: int = 1, mean: float = 0.5, pixel_std: float = 0.2,
                       exponent: float = 1.5, floor: float = 1e-4) -> "StationaryGaussianPrior":
        """Σ̂(ω) ∝ (1 + |ω|²)^(−a)、画素分散が pixel_std² になるよう正規化"""
        fy, fx = frequency_grid(h, w)
        shape = (1.0 + fy ** 2 + fx ** 2) ** (-exponent)
        shape = shape / shape.mean() * pixel_std ** 2 + floor * pixel_std ** 2
        return cls(np.full((h, w, c), mean), np.repeat(shape[:, :, None], c, axis=2))

    @classmethod
    def fit(cls, images: np.ndarray, floor: float = 1e-6) -> "StationaryGaussianPrior":
        """画像スタック (N, H, W, C) から平均とピリオドグラムを推定"""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        h, w = images.shape[1:3]
        mean = np.broadcast_to(images.mean(axis=(0, 1, 2), keepdims=True)[0], images.shape[1:]).copy()
        periodogram = np.abs(fft2(images - mean)) ** 2 / (h * w)
        spectrum = periodogram.mean(axis=0) + floor
        return cls(mean, spectrum)

    def _marginal_spectrum(self, ab: float) -> np.ndarray:
        return ab * self.spectrum + (1.0 - ab)

    def score_at(self, x_t: np.ndarray, ab: float) -> np.ndarray:
        """∇ log p(x_t) = −C_t⁻¹ (x_t − √ᾱ μ)"""
        d = np.asarray(x_t) - np.sqrt(ab) * self.mean
        return -ifft2(fft2(d) / self._marginal_spectrum(ab))

    def predict_eps(self, x_t, t, schedule):
        ab = _alpha_bar(schedule, t)
        return -np.sqrt(1.0 - ab) * self.score_at(x_t, ab)

    def conditional_mean(self, x_t: np.ndarray, t: int, schedule: DiffusionSchedule) -> np.ndarray:
        """E[x₀|x_t] = μ + √ᾱ Σ C_t⁻¹ (x_t − √ᾱ μ)"""
        ab = _alpha_bar(schedule, t)
        d = np.asarray(x_t) - np.sqrt(ab) * self.mean
        return self.mean + ifft2(fft2(d) * (np.sqrt(ab) * self.spectrum / self._marginal_spectrum(ab)))

    def jvp_xhat0(self, x_t, t, v, schedule):
        # 実数・偶対称な乗数なので転置は自分自身
        ab = _alpha_bar(schedule, t)
        return ifft2(fft2(v) * (np.sqrt(ab) * self.spectrum / self._marginal_spectrum(ab)))

    def x0_variance_spectrum(self, t: int, schedule: DiffusionSchedule) -> np.ndarray:
        """Cov[x₀|x_t] の固有値 Σ̂(1−ᾱ)/(ᾱΣ̂ + 1 − ᾱ)"""
        ab = _alpha_bar(schedule, t)
        return self.spectrum * (1.0 - ab) / self._marginal_spectrum(ab)

    def log_density(self, x: np.ndarray, ab: float = 1.0) -> float:
        """log p(x_t) for a single image (normalizing constant included)."""
        h, w, _ = self.shape
        v = self._marginal_spectrum(ab)
        d = np.asarray(x) - np.sqrt(ab) * self.mean
        quad = np.sum(np.abs(fft2(d)) ** 2 / v) / (h * w)
        return float(-0.5 * quad - 0.5 * np.sum(np.log(v)) - 0.5 * d.size * np.log(2 * np.pi))

    def sample(self, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
        """事前分布からのサンプル（n を与えると (n, H, W, C)）"""
        shape = self.shape if n is None else (n,) + self.shape
        g = rng.standard_normal(shape)
        return self.mean + ifft2(fft2(g) * np.sqrt(self.spectrum))


def _posterior_terms(y: np.ndarray, kernel: KernelLike, sigma: float, prior: StationaryGaussianPrior):
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0 (got {sigma})")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != prior.shape:
        raise ShapeError(f"Observation shape {y.shape} does not match prior {prior.shape}")
    h, w, _ = y.shape
    hk = embed_kernel(kernel, h, w)[:, :, None]
    degenerate = (prior.spectrum == 0) & (np.abs(hk) == 0)
    if np.any(degenerate):
        idx = tuple(int(i) for i in np.argwhere(degenerate)[0])
        raise DegenerateFrequencyError("prior variance and kernel response both vanish", idx)
    return y, hk


def analytic_posterior(y: np.ndarray, kernel: KernelLike, sigma: float,
                       prior: StationaryGaussianPrior) -> Tuple[np.ndarray, np.ndarray]:
    """
    p(x₀|y, H) per frequency: precision |ĥ|²/σ² + 1/Σ̂, written in covariance
    form so that Σ̂ = 0 bins collapse onto the prior mean.

    Returns the posterior mean image and the variance spectrum (H, W, C).
    """
    y, hk = _posterior_terms(y, kernel, sigma, prior)
    s = prior.spectrum
    denom = np.abs(hk) ** 2 * s + sigma ** 2
    mu_hat = fft2(prior.mean)
    mean_hat = mu_hat + s * np.conj(hk) * (fft2(y) - hk * mu_hat) / denom
    variance = s * sigma ** 2 / denom
    return ifft2(mean_hat), variance


def sample_analytic_posterior(y: np.ndarray, kernel: KernelLike, sigma: float, prior: StationaryGaussianPrior,
                              rng: np.random.Generator, n: int) -> np.ndarray:
    """厳密な事後分布から n 個サンプル (n, H, W, C)"""
    mean, variance = analytic_posterior(y, kernel, sigma, prior)
    g = rng.standard_normal((n,) + mean.shape)
    return mean + ifft2(fft2(g) * np.sqrt(variance))


def log_marginal_likelihood(y: np.ndarray, kernel: KernelLike, sigma: float, prior: StationaryGaussianPrior) -> float:
    """log p(y|H): y ~ N(Hμ, HΣHᵀ + σ²I)"""
    y, hk = _posterior_terms(y, kernel, sigma, prior)
    h, w, _ = y.shape
    var = np.abs(hk) ** 2 * prior.spectrum + sigma ** 2
    r_hat = fft2(y) - hk * fft2(prior.mean)
    quad = np.sum(np.abs(r_hat) ** 2 / var) / (h * w)
    return float(-0.5 * quad - 0.5 * np.sum(np.log(var)) - 0.5 * y.size * np.log(2 * np.pi))


class GmmPrior(ScoreModel):
    """
    Mixture of isotropic Gaussians over whole images: Σ_k w_k N(m_k, s² I).
    Responsibilities are evaluated with log-sum-exp.
    """

    def __init__(self, means: np.ndarray, variance: float, weights: Optional[np.ndarray] = None):
        means = np.asarray(means, dtype=np.float64)
        if means.ndim == 3:
            means = means[:, :, :, None]
        if means.ndim != 4:
            raise ShapeError(f"GMM means must be (K, H, W, C), got {means.shape}")
        if variance <= 0:
            raise ValueError(f"GMM variance must be > 0 (got {variance})")
        k = means.shape[0]
        weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
        if weights.shape != (k,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("GMM weights must be a probability vector over components")
        self.means = means
        self.variance = float(variance)
        self.weights = weights

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.means.shape[1:]

    def _flat(self, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        x = np.asarray(x, dtype=np.float64)
        lead = x.shape[:-3]
        return x.reshape((-1, int(np.prod(self.shape)))), lead

    def responsibilities(self, x_t: np.ndarray, ab: float) -> np.ndarray:
        """γ_k(x_t) (B, K); 各行の和は 1"""
        flat, _ = self._flat(x_t)
        m = np.sqrt(ab) * self.means.reshape(self.means.shape[0], -1)
        v = ab * self.variance + 1.0 - ab
        sq = np.sum((flat[:, None, :] - m[None, :, :]) ** 2, axis=-1)
        logits = np.log(self.weights)[None, :] - 0.5 * sq / v
        return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))

    def score_at(self, x_t: np.ndarray, ab: float) -> np.ndarray:
        flat, lead = self._flat(x_t)
        gamma = self.responsibilities(x_t, ab)
        m = np.sqrt(ab) * self.means.reshape(self.means.shape[0], -1)
        v = ab * self.variance + 1.0 - ab
        s = -(flat - gamma @ m) / v
        return s.reshape(lead + self.shape)

    def predict_eps(self, x_t, t, schedule):
        ab = _alpha_bar(schedule, t)
        return -np.sqrt(1.0 - ab) * self.score_at(x_t, ab)

    def jvp_xhat0(self, x_t, t, v, schedule):
        """
        J = (I + (1−ᾱ)∂s/∂x)/√ᾱ with ∂s/∂x = −I/v_t + ᾱ Cov_γ(m)/v_t²,
        which is symmetric, so Jᵀv = Jv.
        """
        ab = _alpha_bar(schedule, t)
        flat_v, lead = self._flat(v)
        gamma = self.responsibilities(x_t, ab)
        means = self.means.reshape(self.means.shape[0], -1)
        vt = ab * self.variance + 1.0 - ab
        centered = means[None, :, :] - (gamma @ means)[:, None, :]
        proj = np.einsum("bkd,bd->bk", centered, flat_v)
        cov_v = ab * np.einsum("bk,bkd->bd", gamma * proj, centered)
        ds_v = -flat_v / vt + cov_v / vt ** 2
        out = (flat_v + (1.0 - ab) * ds_v) / np.sqrt(ab)
        return out.reshape(lead + self.shape)

    def log_density(self, x: np.ndarray, ab: float = 1.0) -> float:
        flat, _ = self._flat(x)
        m = np.sqrt(ab) * self.means.reshape(self.means.shape[0], -1)
        v = ab * self.variance + 1.0 - ab
        d = flat.shape[1]
        sq = np.sum((flat[0][None, :] - m) ** 2, axis=-1)
        comp = np.log(self.weights) - 0.5 * sq / v - 0.5 * d * np.log(2 * np.pi * v)
        return float(logsumexp(comp))
