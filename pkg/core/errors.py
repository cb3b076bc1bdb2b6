"""
Exception hierarchy for the diffem toolkit
"""

from typing import Optional


class DiffemError(Exception):
    """diffem の基底例外"""


class ShapeError(DiffemError, ValueError):
    """次元不一致・カーネルサイズ超過"""


class ScheduleError(DiffemError, ValueError):
    """拡散スケジュールの不正"""


class DegenerateFrequencyError(DiffemError, ArithmeticError):
    """ある周波数で分母がゼロになる"""

    def __init__(self, message: str, frequency: Optional[tuple] = None):
        super().__init__(message)
        self.frequency = frequency


class FormatError(DiffemError, ValueError):
    """RTF1 / DNW1 ファイル形式エラー"""


class ConfigError(DiffemError, ValueError):
    """設定ファイル・設定値の検証エラー"""


class TrainingDivergedError(DiffemError, RuntimeError):
    """学習の発散（loss が NaN）"""

    def __init__(self, step: int, loss: float):
        super().__init__(f"Training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


class RegularizerError(DiffemError, RuntimeError):
    """HQS 内での正則化ステップの失敗"""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"Regularizer failed at HQS iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


class SamplerDivergedError(DiffemError, RuntimeError):
    """逆拡散の発散（粒子に NaN / inf）"""

    def __init__(self, t: int, guidance: str):
        super().__init__(f"Reverse diffusion diverged at t={t} ({guidance} guidance): particles are not finite")
        self.t = t
        self.guidance = guidance
