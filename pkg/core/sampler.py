"""
DDPM schedules, likelihood guidance and the guided reverse-diffusion sampler
"""

from typing import List, Optional, Sequence, Union

import numpy as np
import structlog
from tqdm import tqdm

from config import Config, DiffusionConfig
from models.ensemble import DiffusionSchedule, ParticleEnsemble
from models.settings import GuidanceKind, ScheduleConfig
from .errors import DegenerateFrequencyError, SamplerDivergedError, ScheduleError
from .score_models import ScoreModel, xhat0_from_eps
from .tensor_ops import KernelLike, circular_convolve, circular_correlate, embed_kernel, fft2, ifft2

logger = structlog.get_logger(__name__)

TERMINAL_ALPHA_BAR = 1e-2

RngLike = Union[int, np.random.Generator, Sequence[np.random.Generator]]


def make_schedule(T: int, beta_min: float, beta_max: float, sigma_tilde_mode: str = "posterior",
                  zeta_mode: str = "sqrt-alphabar", r_mode: str = "variance-ratio") -> DiffusionSchedule:
    """
    Linear β ramp over t = 1..T; every table has length T+1 with index 0
    standing for the data end.
    """
    if T < 1:
        raise ScheduleError(f"T must be >= 1 (got {T})")
    if not 0 < beta_min <= beta_max < 1:
        raise ScheduleError(f"Invalid beta range: need 0 < beta_min <= beta_max < 1 (got {beta_min}, {beta_max})")

    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_min, beta_max, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)

    sigma_tilde = np.zeros(T + 1)
    if sigma_tilde_mode == "posterior":
        sigma_tilde[1:] = np.sqrt((1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:])
    elif sigma_tilde_mode == "beta":
        sigma_tilde[1:] = np.sqrt(beta[1:])
    else:
        raise ScheduleError(f"Unknown sigma_tilde mode: {sigma_tilde_mode}")

    if zeta_mode == "sqrt-alphabar":
        zeta = np.sqrt(alpha_bar)
    elif zeta_mode == "one":
        zeta = np.ones(T + 1)
    else:
        raise ScheduleError(f"Unknown zeta mode: {zeta_mode}")

    if r_mode == "variance-ratio":
        r = np.sqrt(1.0 - alpha_bar)
    elif r_mode == "zero":
        r = np.zeros(T + 1)
    else:
        raise ScheduleError(f"Unknown r mode: {r_mode}")

    if alpha_bar[T] >= TERMINAL_ALPHA_BAR:
        logger.warning("schedule_not_terminal", T=T, alpha_bar_T=float(alpha_bar[T]))

    return DiffusionSchedule(
        T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma_tilde=sigma_tilde, zeta=zeta, r=r,
        sigma_tilde_mode=sigma_tilde_mode, zeta_mode=zeta_mode, r_mode=r_mode,
    )


def schedule_from_config(config: ScheduleConfig) -> DiffusionSchedule:
    beta_min, beta_max = config.betas()
    return make_schedule(config.T, beta_min, beta_max,
                         config.sigma_tilde_mode, config.zeta_mode, config.r_mode)


def _check_sigma(sigma: float):
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0 (got {sigma})")


def dps_guidance(x_t: np.ndarray, t: int, y: np.ndarray, kernel: KernelLike, sigma: float, model: ScoreModel,
                 schedule: DiffusionSchedule, weight: Optional[float] = None,
                 xhat0: Optional[np.ndarray] = None) -> np.ndarray:
    """
    −w ∇_{x_t} ‖y − H x̂₀(x_t)‖² = 2w Jᵀ Hᵀ (y − H x̂₀), w = 1/σ² by default.
    """
    _check_sigma(sigma)
    w = 1.0 / sigma ** 2 if weight is None else weight
    if xhat0 is None:
        xhat0 = model.xhat0(x_t, t, schedule)
    residual = y - circular_convolve(xhat0, kernel)
    return 2.0 * w * model.jvp_xhat0(x_t, t, circular_correlate(residual, kernel), schedule)


def _weighted_guidance(x_t, t, y, kernel, sigma, model, schedule, xhat0, variance) -> np.ndarray:
    """Jᵀ Hᵀ (V |ĥ|² + σ²)⁻¹ (y − H x̂₀)、V は周波数ごとの x₀ の分散"""
    if xhat0 is None:
        xhat0 = model.xhat0(x_t, t, schedule)
    h, w = x_t.shape[-3], x_t.shape[-2]
    hk = embed_kernel(kernel, h, w)[:, :, None]
    denom = variance * np.abs(hk) ** 2 + sigma ** 2
    if np.any(denom == 0):
        idx = tuple(int(i) for i in np.argwhere(denom == 0)[0])
        raise DegenerateFrequencyError("r_t^2 |h|^2 + sigma^2 vanishes", idx)
    residual = y - circular_convolve(xhat0, kernel)
    weighted = ifft2(fft2(residual) / denom)
    return model.jvp_xhat0(x_t, t, circular_correlate(weighted, kernel), schedule)


def pigdm_guidance(x_t: np.ndarray, t: int, y: np.ndarray, kernel: KernelLike, sigma: float, model: ScoreModel,
                   schedule: DiffusionSchedule, xhat0: Optional[np.ndarray] = None) -> np.ndarray:
    """Jᵀ Hᵀ (r_t² H Hᵀ + σ² I)⁻¹ (y − H x̂₀), inverted per frequency."""
    r2 = float(schedule.r[t]) ** 2
    return _weighted_guidance(x_t, t, y, kernel, sigma, model, schedule, xhat0, r2)


def exact_guidance(x_t: np.ndarray, t: int, y: np.ndarray, kernel: KernelLike, sigma: float, model: ScoreModel,
                   schedule: DiffusionSchedule, xhat0: Optional[np.ndarray] = None) -> np.ndarray:
    """
    ∇_{x_t} log p(y|x_t) when x₀|x_t is Gaussian with Fourier-diagonal
    covariance (stationary Gaussian prior): r_t² is replaced by that
    covariance spectrum.
    """
    variance_fn = getattr(model, "x0_variance_spectrum", None)
    if variance_fn is None:
        raise ValueError(f"{type(model).__name__} has no closed-form x0|x_t covariance; exact guidance unavailable")
    return _weighted_guidance(x_t, t, y, kernel, sigma, model, schedule, xhat0, variance_fn(t, schedule))


def compute_guidance(kind: GuidanceKind, x_t: np.ndarray, t: int, y: np.ndarray, kernel: KernelLike, sigma: float,
                     model: ScoreModel, schedule: DiffusionSchedule, xhat0: Optional[np.ndarray] = None,
                     dps_weight: Optional[float] = None) -> np.ndarray:
    """ガイダンス種別ごとに勾配を計算"""
    if kind == GuidanceKind.DPS:
        return dps_guidance(x_t, t, y, kernel, sigma, model, schedule, weight=dps_weight, xhat0=xhat0)
    if kind == GuidanceKind.PIGDM:
        return pigdm_guidance(x_t, t, y, kernel, sigma, model, schedule, xhat0=xhat0)
    if kind == GuidanceKind.EXACT:
        return exact_guidance(x_t, t, y, kernel, sigma, model, schedule, xhat0=xhat0)
    raise ValueError(f"Unknown guidance kind: {kind}")


def particle_generators(seed: int, n: int) -> List[np.random.Generator]:
    """マスターシードから粒子ごとの独立ストリームを生成（粒子 i のストリームは n に依存しない）"""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def _as_generators(rng: RngLike, n: int) -> List[np.random.Generator]:
    if isinstance(rng, (int, np.integer)):
        return particle_generators(int(rng), n)
    if isinstance(rng, np.random.Generator):
        seeds = rng.integers(0, 2 ** 32, size=n)
        return [np.random.default_rng(int(s)) for s in seeds]
    rngs = list(rng)
    if len(rngs) != n:
        raise ValueError(f"Need {n} generators, got {len(rngs)}")
    return rngs


def _standard_normal(rng: Union[np.random.Generator, Sequence[np.random.Generator]], shape: tuple) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    return np.stack([g.standard_normal(shape[1:]) for g in rng])


def ddpm_step(x_t: np.ndarray, t: int, score_like: np.ndarray, schedule: DiffusionSchedule,
              rng: Union[np.random.Generator, Sequence[np.random.Generator]]) -> np.ndarray:
    """
    x_{t−1} = (x_t + β_t s)/√α_t + σ̃_t z. No noise is added on the last
    step (t = 1).

    rng may be a single generator or one generator per leading batch entry.
    """
    if t < 1:
        raise ScheduleError(f"ddpm_step needs t >= 1 (got {t})")
    x_prev = (x_t + schedule.beta[t] * score_like) / np.sqrt(schedule.alpha[t])
    if t > 1 and schedule.sigma_tilde[t] > 0:
        x_prev = x_prev + schedule.sigma_tilde[t] * _standard_normal(rng, np.shape(x_t))
    return x_prev


def ensure_bounded(x: np.ndarray, t: int, guidance: GuidanceKind) -> np.ndarray:
    """粒子が有限かつ DIVERGENCE_LIMIT 以内でなければ SamplerDivergedError"""
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DiffusionConfig.DIVERGENCE_LIMIT:
        logger.error("sampler_diverged", t=t, guidance=guidance.value)
        raise SamplerDivergedError(t, guidance.value)
    return x


def guided_score(eps: np.ndarray, guidance: np.ndarray, t: int, schedule: DiffusionSchedule) -> np.ndarray:
    """s = ζ_t g − ε̂/√(1−ᾱ_t)"""
    return schedule.zeta[t] * guidance - eps / np.sqrt(1.0 - schedule.alpha_bar[t])


def sample_nonblind(y: np.ndarray, sigma: float, kernel: KernelLike, n: int, schedule: DiffusionSchedule,
                    guidance: GuidanceKind, model: ScoreModel, rng: RngLike,
                    dps_weight: Optional[float] = None, show_progress: Optional[bool] = None) -> ParticleEnsemble:
    """
    n independent guided reverse-diffusion trajectories for a known kernel.

    Each timestep runs: predict ε, form x̂₀, guidance g, combined score,
    DDPM update. All particles are evaluated as one batch; randomness is
    drawn from one stream per particle.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1 (got {n})")
    y = np.asarray(y, dtype=np.float64)
    if isinstance(guidance, str):
        guidance = GuidanceKind(guidance)
    rngs = _as_generators(rng, n)
    x = np.stack([g.standard_normal(y.shape) for g in rngs])
    show = Config.SHOW_PROGRESS if show_progress is None else show_progress

    logger.debug("sample_start", n=n, T=schedule.T, guidance=guidance.value, shape=list(y.shape))
    for t in tqdm(schedule.timesteps(), total=schedule.T, desc="sample", disable=not show, leave=False):
        eps = model.predict_eps(x, t, schedule)
        xhat0 = xhat0_from_eps(x, t, eps, schedule)
        g = compute_guidance(guidance, x, t, y, kernel, sigma, model, schedule, xhat0=xhat0, dps_weight=dps_weight)
        x = ddpm_step(x, t, guided_score(eps, g, t, schedule), schedule, rngs)
        ensure_bounded(x, t, guidance)

    return ParticleEnsemble(x, stream_ids=list(range(n)))
