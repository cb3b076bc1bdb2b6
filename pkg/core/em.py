"""
Blind deconvolution drivers: Diffusion EM and Fast Diffusion EM
"""

from typing import Callable, Optional, Tuple

import numpy as np
import structlog
from tqdm import tqdm

from config import Config
from models.ensemble import ParticleEnsemble
from models.kernel import BlurKernel
from models.log import EmTrace, TraceRecord
from models.settings import EmConfig, GuidanceKind
from .errors import ConfigError
from .mstep import KernelRegularizer, data_objective, hqs_mstep, make_regularizer
from .sampler import (
    compute_guidance, ddpm_step, ensure_bounded, guided_score, particle_generators, sample_nonblind,
    schedule_from_config,
)
from .score_models import ScoreModel, StationaryGaussianPrior, SurrogateJacobianModel, log_marginal_likelihood, xhat0_from_eps

logger = structlog.get_logger(__name__)

EStep = Callable[[BlurKernel, int], ParticleEnsemble]


def init_kernel(spec: str, ksize: int) -> BlurKernel:
    """
    初期カーネルを仕様文字列から生成する。

    delta | uniform | gaussian (= gaussian:k/6) | gaussian:STD | gaussian:k/D
    """
    spec = spec.strip().lower()
    if spec == "delta":
        return BlurKernel.delta(ksize)
    if spec == "uniform":
        return BlurKernel.uniform(ksize)
    if spec == "gaussian":
        return BlurKernel.gaussian(ksize, ksize / 6.0)
    if spec.startswith("gaussian:"):
        arg = spec.split(":", 1)[1]
        try:
            if arg.startswith("k/"):
                std = ksize / float(arg[2:])
            else:
                std = float(arg)
        except ValueError:
            raise ConfigError(f"Invalid gaussian kernel init: {spec!r}")
        if std <= 0:
            raise ConfigError(f"Gaussian init std must be > 0 (got {std})")
        return BlurKernel.gaussian(ksize, std)
    raise ConfigError(f"Unknown kernel init spec: {spec!r} (expected delta, uniform or gaussian:STD)")


def _prepare_model(model: ScoreModel, config: EmConfig) -> ScoreModel:
    return SurrogateJacobianModel(model) if config.surrogate_jacobian else model


def _log_marginal(y, kernel, sigma, model) -> Optional[float]:
    inner = getattr(model, "inner", model)
    if isinstance(inner, StationaryGaussianPrior):
        return log_marginal_likelihood(y, kernel, sigma, inner)
    return None


def _stream_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(iteration)]).generate_state(1)[0])


def diffusion_em(y: np.ndarray, sigma: float, config: EmConfig, model: ScoreModel,
                 regularizer: Optional[KernelRegularizer] = None, kernel_init: Optional[BlurKernel] = None,
                 log_manager=None, estep: Optional[EStep] = None,
                 show_progress: Optional[bool] = None) -> Tuple[ParticleEnsemble, BlurKernel, EmTrace]:
    """
    L iterations of {E-step: n non-blind samples under the current kernel;
    M-step: HQS on those samples}.

    estep(kernel, seed) may replace the diffusion sampler (exact posterior
    sampling on analytic toys).
    """
    y = np.asarray(y, dtype=np.float64)
    model = _prepare_model(model, config)
    schedule = schedule_from_config(config.schedule)
    regularizer = regularizer or make_regularizer(config.mstep.regularizer)
    H = kernel_init or init_kernel(config.kernel_init, config.mstep.kernel_size)
    trace = EmTrace(kernels={0: H.data.copy()})
    show = Config.SHOW_PROGRESS if show_progress is None else show_progress
    ensemble = None

    logger.info("em_start", L=config.L, n=config.n, guidance=config.guidance.value, T=schedule.T)
    for l in tqdm(range(1, config.L + 1), desc="em", disable=not show, leave=False):
        seed = _stream_seed(config.seed, l)
        if estep is not None:
            ensemble = estep(H, seed)
        else:
            ensemble = sample_nonblind(y, sigma, H, config.n, schedule, config.guidance, model,
                                       particle_generators(seed, config.n), dps_weight=config.dps_weight,
                                       show_progress=False)
        hqs: list = []
        H = hqs_mstep(y, ensemble, sigma, config.mstep, H, regularizer, trace=hqs)
        trace.hqs = hqs

        record = TraceRecord(
            algo="em",
            step=l,
            data_fit=data_objective(y, ensemble, H, sigma),
            log_marginal=_log_marginal(y, H, sigma, model),
            mstep_objective=hqs[-1].objective if hqs else None,
        )
        trace.records.append(record)
        if l % config.trace_stride == 0 or l == config.L:
            trace.kernels[l] = H.data.copy()
        if log_manager is not None:
            log_manager.log_trace(record)
        logger.debug("em_iteration", step=l, data_fit=record.data_fit, log_marginal=record.log_marginal)

    logger.info("em_done", L=config.L, data_fit=trace.records[-1].data_fit)
    return ensemble, H, trace


def fast_diffusion_em(y: np.ndarray, sigma: float, config: EmConfig, model: ScoreModel,
                      regularizer: Optional[KernelRegularizer] = None, kernel_init: Optional[BlurKernel] = None,
                      log_manager=None, show_progress: Optional[bool] = None
                      ) -> Tuple[ParticleEnsemble, BlurKernel, EmTrace]:
    """
    One reverse-diffusion pass over the particle batch. At every timestep:
    predict ε for all particles, form x̂₀, update the shared kernel with an
    HQS M-step on the x̂₀ batch (warm-started from the previous estimate),
    then guide with the new kernel and take the DDPM step. x̂₀ is not
    recomputed after the M-step.
    """
    y = np.asarray(y, dtype=np.float64)
    model = _prepare_model(model, config)
    schedule = schedule_from_config(config.schedule)
    regularizer = regularizer or make_regularizer(config.mstep.regularizer)
    H = kernel_init or init_kernel(config.kernel_init, config.mstep.kernel_size)
    trace = EmTrace(kernels={schedule.T + 1: H.data.copy()})
    show = Config.SHOW_PROGRESS if show_progress is None else show_progress

    rngs = particle_generators(config.seed, config.n)
    x = np.stack([g.standard_normal(y.shape) for g in rngs])
    use_r = config.guidance in (GuidanceKind.PIGDM, GuidanceKind.EXACT)

    logger.info("fastem_start", n=config.n, guidance=config.guidance.value, T=schedule.T)
    for i, t in enumerate(tqdm(schedule.timesteps(), total=schedule.T, desc="fastem", disable=not show, leave=False)):
        eps = model.predict_eps(x, t, schedule)
        xhat0 = xhat0_from_eps(x, t, eps, schedule)

        hqs: list = []
        if i % config.mstep_every == 0 or t == 1:
            r_t = float(schedule.r[t]) if use_r else 0.0
            H = hqs_mstep(y, xhat0, sigma, config.mstep, H, regularizer, r_t=r_t, trace=hqs)
            trace.hqs = hqs

        g = compute_guidance(config.guidance, x, t, y, H, sigma, model, schedule, xhat0=xhat0,
                             dps_weight=config.dps_weight)
        x = ddpm_step(x, t, guided_score(eps, g, t, schedule), schedule, rngs)
        ensure_bounded(x, t, config.guidance)

        if i % config.trace_stride == 0 or t == 1:
            record = TraceRecord(
                algo="fastem",
                step=t,
                data_fit=data_objective(y, xhat0, H, sigma),
                mstep_objective=hqs[-1].objective if hqs else None,
            )
            trace.records.append(record)
            trace.kernels[t] = H.data.copy()
            if log_manager is not None:
                log_manager.log_trace(record)

    ensemble = ParticleEnsemble(x, stream_ids=list(range(config.n)))
    final = TraceRecord(
        algo="fastem", step=0, data_fit=data_objective(y, ensemble, H, sigma),
        log_marginal=_log_marginal(y, H, sigma, model),
    )
    trace.records.append(final)
    if log_manager is not None:
        log_manager.log_trace(final)
    logger.info("fastem_done", data_fit=trace.records[-1].data_fit)
    return ensemble, H, trace
