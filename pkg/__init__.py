"""
diffem

Blind deconvolution with diffusion priors: guided posterior sampling,
Diffusion EM and Fast Diffusion EM kernel estimation.
"""

__version__ = "1.0.0"
__description__ = "Blind deconvolution with diffusion priors"

from core import diffusion_em, fast_diffusion_em, sample_nonblind, hqs_mstep
from models import BlurKernel, ParticleEnsemble, EmConfig, MStepConfig
from config import Config, DiffusionConfig

__all__ = [
    'diffusion_em',
    'fast_diffusion_em',
    'sample_nonblind',
    'hqs_mstep',
    'BlurKernel',
    'ParticleEnsemble',
    'EmConfig',
    'MStepConfig',
    'Config',
    'DiffusionConfig'
]
