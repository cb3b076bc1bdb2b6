"""
diffem core components
"""

from .errors import (
    DiffemError, ShapeError, ScheduleError, DegenerateFrequencyError, FormatError, ConfigError,
    TrainingDivergedError, RegularizerError, SamplerDivergedError,
)
from .log_manager import RunLogManager, configure_logging
from .config_loader import ConfigLoader, PriorSpec, RunPreset
from .score_models import ScoreModel, StationaryGaussianPrior, GmmPrior, analytic_posterior
from .sampler import make_schedule, sample_nonblind, ddpm_step
from .mstep import fourier_data_solve, fast_solve_dps, fast_solve_pigdm, hqs_mstep
from .denoiser import DenoiserNet
from .em import init_kernel, diffusion_em, fast_diffusion_em
from .metrics import psnr, kernel_mse, reblur_loss
from .benchmark import benchmark, regularizer_sweep

__all__ = [
    'DiffemError',
    'ShapeError',
    'ScheduleError',
    'DegenerateFrequencyError',
    'FormatError',
    'ConfigError',
    'TrainingDivergedError',
    'RegularizerError',
    'SamplerDivergedError',
    'RunLogManager',
    'configure_logging',
    'ConfigLoader',
    'PriorSpec',
    'RunPreset',
    'ScoreModel',
    'StationaryGaussianPrior',
    'GmmPrior',
    'analytic_posterior',
    'make_schedule',
    'sample_nonblind',
    'ddpm_step',
    'fourier_data_solve',
    'fast_solve_dps',
    'fast_solve_pigdm',
    'hqs_mstep',
    'DenoiserNet',
    'init_kernel',
    'diffusion_em',
    'fast_diffusion_em',
    'psnr',
    'kernel_mse',
    'reblur_loss',
    'benchmark',
    'regularizer_sweep'
]
