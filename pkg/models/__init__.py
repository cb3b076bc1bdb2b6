"""
diffem data models
"""

from .kernel import BlurKernel
from .ensemble import ParticleEnsemble, DiffusionSchedule
from .settings import GuidanceKind, RegularizerKind, DegradationConfig, MStepConfig, ScheduleConfig, EmConfig, TrainConfig
from .log import TraceRecord, HqsRecord, ManifestRecord, MetricsRecord, MetricsReport, EmTrace, SystemLog, SessionSummary

__all__ = [
    'BlurKernel',
    'ParticleEnsemble',
    'DiffusionSchedule',
    'GuidanceKind',
    'RegularizerKind',
    'DegradationConfig',
    'MStepConfig',
    'ScheduleConfig',
    'EmConfig',
    'TrainConfig',
    'TraceRecord',
    'HqsRecord',
    'ManifestRecord',
    'MetricsRecord',
    'MetricsReport',
    'EmTrace',
    'SystemLog',
    'SessionSummary'
]
