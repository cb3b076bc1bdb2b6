"""
Configuration settings for the diffem toolkit
"""

import os
from pathlib import Path
from typing import List, Optional, Tuple


class Config:
    """設定クラス"""

    # 出力設定
    DEFAULT_OUTPUT_DIR = "./diffem_output"
    DEFAULT_CONFIGS_DIR = str(Path(__file__).resolve().parent / "configs")

    # ログ設定
    LOG_LEVEL = "INFO"
    LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # 並列実行設定
    THREADS_ENV_VAR = "DIFFEM_THREADS"
    DEFAULT_THREADS = 1

    # 進捗バー
    SHOW_PROGRESS = True

    # 画像ファイル
    IMAGE_EXTENSIONS = ['.png', '.rtf', '.rtf1']

    @classmethod
    def validate(cls) -> List[str]:
        """設定の検証"""
        errors = []
        env_threads = os.environ.get(cls.THREADS_ENV_VAR)
        if env_threads is not None:
            try:
                if int(env_threads) < 1:
                    errors.append(f"{cls.THREADS_ENV_VAR} must be >= 1 (got {env_threads})")
            except ValueError:
                errors.append(f"{cls.THREADS_ENV_VAR} must be an integer (got {env_threads!r})")
        return errors

    @classmethod
    def get_threads(cls, cli_value: Optional[int] = None) -> int:
        """--threads → 環境変数 → デフォルトの順で解決"""
        if cli_value is not None:
            return max(1, int(cli_value))
        env_threads = os.environ.get(cls.THREADS_ENV_VAR)
        if env_threads:
            try:
                return max(1, int(env_threads))
            except ValueError:
                pass
        return cls.DEFAULT_THREADS

    @classmethod
    def get_output_dir(cls, custom_dir: str = None) -> Path:
        """出力ディレクトリの取得"""
        output_dir = custom_dir or cls.DEFAULT_OUTPUT_DIR
        return Path(output_dir).resolve()

    @classmethod
    def get_log_dir(cls, output_dir: Path) -> Path:
        """ログディレクトリの取得"""
        return Path(output_dir) / "logs"

    @classmethod
    def get_configs_directory(cls, custom_dir: str = None) -> Path:
        """設定ディレクトリの取得"""
        return Path(custom_dir or cls.DEFAULT_CONFIGS_DIR).resolve()


class DiffusionConfig:
    """アルゴリズムの既定ハイパーパラメータ"""

    # EM
    EM_ITERATIONS = 10          # L
    PARTICLES = 1               # n
    SUPPORTED_PARTICLES = (1, 4, 16)

    # M-step (HQS)
    HQS_ITERATIONS = 10         # J
    LAMBDA = 1.0
    BETA_HQS = 1e5

    # 拡散スケジュール
    T_DPS = 1000
    T_PIGDM = 100
    # β の既定範囲は 1000 ステップ基準。T が短いときは 1000/T 倍に伸ばす
    REFERENCE_T = 1000
    BETA_MIN = 1e-4
    BETA_MAX = 0.02
    BETA_CAP = 0.5
    SIGMA_TILDE_MODE = "posterior"     # posterior | beta
    ZETA_MODE = "sqrt-alphabar"         # sqrt-alphabar | one
    R_MODE = "variance-ratio"           # variance-ratio | zero
    # 粒子の絶対値がこれを超えたら発散とみなす
    DIVERGENCE_LIMIT = 1e12

    # カーネル
    KERNEL_SIZE = 11
    KERNEL_INIT = "gaussian:k/6"

    # デノイザー
    DENOISER_BLOCKS = 5
    DENOISER_CHANNELS = 32
    DENOISER_CANVAS = 32
    DENOISER_KERNEL_SIZES = (7, 11, 15)

    @classmethod
    def beta_range(cls, T: int) -> Tuple[float, float]:
        """T ステップで ᾱ_T が基準スケジュールと同程度になる β 範囲"""
        scale = cls.REFERENCE_T / max(1, T)
        return min(cls.BETA_MIN * scale, cls.BETA_CAP), min(cls.BETA_MAX * scale, cls.BETA_CAP)

    @classmethod
    def default_T(cls, guidance: str) -> int:
        """ガイダンス種別ごとの既定ステップ数"""
        return cls.T_PIGDM if guidance == "pigdm" else cls.T_DPS
