"""
Run configuration data models
"""

from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Dict, Optional, Tuple

from config import DiffusionConfig


class GuidanceKind(Enum):
    DPS = "dps"
    PIGDM = "pigdm"
    EXACT = "exact"


class RegularizerKind(Enum):
    IDENTITY = "identity"
    L1 = "l1"
    L2 = "l2"
    PNP = "pnp"


@dataclass
class DegradationConfig:
    """劣化（ぼけ＋ノイズ）生成の設定"""
    sigma: float = 5.0 / 255.0
    kernel_size: int = DiffusionConfig.KERNEL_SIZE
    rng_seed: int = 0
    trajectory_steps: int = 64
    step_std: float = 0.6
    inertia: float = 0.7
    smooth_std: float = 0.5

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0 (got {self.sigma})")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 3 (got {self.kernel_size})")
        if self.trajectory_steps < 0:
            raise ValueError(f"trajectory_steps must be >= 0 (got {self.trajectory_steps})")
        if not 0.0 <= self.inertia < 1.0:
            raise ValueError(f"inertia must lie in [0, 1) (got {self.inertia})")

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return asdict(self)


@dataclass
class MStepConfig:
    """M-step (HQS) の設定"""
    J: int = DiffusionConfig.HQS_ITERATIONS
    lam: float = DiffusionConfig.LAMBDA
    beta_hqs: float = DiffusionConfig.BETA_HQS
    regularizer: str = "l2"
    project_simplex: bool = True
    kernel_size: int = DiffusionConfig.KERNEL_SIZE

    def __post_init__(self):
        if self.J < 1:
            raise ValueError(f"J must be >= 1 (got {self.J})")
        if self.beta_hqs <= 0:
            raise ValueError(f"beta_hqs must be > 0 (got {self.beta_hqs})")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0 (got {self.lam})")

    @property
    def strength(self) -> float:
        """正則化ステップの強さ √(λ/β)"""
        return (self.lam / self.beta_hqs) ** 0.5

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return asdict(self)


@dataclass
class ScheduleConfig:
    """拡散スケジュールの設定。β 範囲を省略すると T に合わせて伸縮する"""
    T: int = DiffusionConfig.T_PIGDM
    beta_min: Optional[float] = None
    beta_max: Optional[float] = None
    sigma_tilde_mode: str = DiffusionConfig.SIGMA_TILDE_MODE
    zeta_mode: str = DiffusionConfig.ZETA_MODE
    r_mode: str = DiffusionConfig.R_MODE

    def betas(self) -> Tuple[float, float]:
        """明示値、なければ DiffusionConfig.beta_range(T)"""
        lo, hi = DiffusionConfig.beta_range(self.T)
        return (lo if self.beta_min is None else self.beta_min,
                hi if self.beta_max is None else self.beta_max)

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        data = asdict(self)
        data["beta_min"], data["beta_max"] = self.betas()
        return data


@dataclass
class EmConfig:
    """Diffusion EM / Fast Diffusion EM の設定"""
    L: int = DiffusionConfig.EM_ITERATIONS
    n: int = DiffusionConfig.PARTICLES
    guidance: GuidanceKind = GuidanceKind.PIGDM
    dps_weight: Optional[float] = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    mstep: MStepConfig = field(default_factory=MStepConfig)
    kernel_init: str = DiffusionConfig.KERNEL_INIT
    seed: int = 0
    mstep_every: int = 1
    trace_stride: int = 10
    surrogate_jacobian: bool = False

    def __post_init__(self):
        if isinstance(self.guidance, str):
            self.guidance = GuidanceKind(self.guidance)
        if self.L < 1:
            raise ValueError(f"L must be >= 1 (got {self.L})")
        if self.n < 1:
            raise ValueError(f"n must be >= 1 (got {self.n})")
        if self.mstep_every < 1:
            raise ValueError(f"mstep_every must be >= 1 (got {self.mstep_every})")

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        data = asdict(self)
        data["guidance"] = self.guidance.value
        return data


@dataclass
class TrainConfig:
    """カーネルデノイザー学習の設定"""
    sigma_range: Tuple[float, float] = (0.0, 0.05)
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-2
    momentum: float = 0.9
    seed: int = 0
    canvas: int = DiffusionConfig.DENOISER_CANVAS
    kernel_sizes: Tuple[int, ...] = DiffusionConfig.DENOISER_KERNEL_SIZES
    dataset_size: int = 256
    monitor_size: int = 16

    def __post_init__(self):
        lo, hi = self.sigma_range
        if lo < 0 or hi < lo:
            raise ValueError(f"Invalid sigma range {self.sigma_range}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        data = asdict(self)
        data["sigma_range"] = list(self.sigma_range)
        data["kernel_sizes"] = list(self.kernel_sizes)
        return data
