"""
Logging and record data models for the diffem toolkit
"""

from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, List, Optional

import numpy as np


@dataclass
class TraceRecord:
    """EM 反復（Diffusion EM）またはタイムステップ（Fast EM）ごとの記録"""
    algo: str                 # em, fastem
    step: int                 # 反復番号 l または timestep t
    data_fit: float           # (1/(2σ²n)) Σ‖y − H xⁱ‖²
    kernel_path: Optional[str] = None
    log_marginal: Optional[float] = None
    mstep_objective: Optional[float] = None

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "algo": self.algo,
            "step": self.step,
            "data_fit": self.data_fit,
            "kernel_path": self.kernel_path,
            "log_marginal": self.log_marginal,
            "mstep_objective": self.mstep_objective,
        }


@dataclass
class HqsRecord:
    """HQS 1 反復分の目的関数値"""
    iteration: int
    objective: float          # (1/(2nσ²)) Σ‖y − K xⁱ‖² + λΦ(K)
    split_objective: float    # f(Z) + λΦ(K) + β/2‖Z − K‖²

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "iteration": self.iteration,
            "objective": self.objective,
            "split_objective": self.split_objective,
        }


@dataclass
class ManifestRecord:
    """データセットの 1 項目（clean, kernel, degraded）"""
    clean_path: str
    kernel_path: str
    degraded_path: str
    sigma: float
    seed: int
    source: str = ""
    error: Optional[str] = None

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "clean_path": self.clean_path,
            "kernel_path": self.kernel_path,
            "degraded_path": self.degraded_path,
            "sigma": self.sigma,
            "seed": self.seed,
            "source": self.source,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ManifestRecord":
        return cls(
            clean_path=data["clean_path"],
            kernel_path=data["kernel_path"],
            degraded_path=data["degraded_path"],
            sigma=float(data["sigma"]),
            seed=int(data["seed"]),
            source=data.get("source", ""),
            error=data.get("error"),
        )


@dataclass
class MetricsRecord:
    """ベンチマーク 1 項目の評価値"""
    item: str
    psnr: Optional[float] = None
    psnr_sa: Optional[float] = None
    psnr_particles: List[float] = field(default_factory=list)
    kernel_mse: Optional[float] = None
    reblur: Optional[float] = None
    runtime_seconds: float = 0.0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self, include_timing: bool = False) -> Dict:
        """辞書形式に変換（実行時間は決定論的な出力から外す）"""
        data = {
            "item": self.item,
            "psnr": self.psnr,
            "psnr_sa": self.psnr_sa,
            "psnr_particles": self.psnr_particles,
            "kernel_mse": self.kernel_mse,
            "reblur": self.reblur,
            "error": self.error,
        }
        if include_timing:
            data["runtime_seconds"] = self.runtime_seconds
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "MetricsRecord":
        return cls(
            item=data["item"],
            psnr=data.get("psnr"),
            psnr_sa=data.get("psnr_sa"),
            psnr_particles=list(data.get("psnr_particles") or []),
            kernel_mse=data.get("kernel_mse"),
            reblur=data.get("reblur"),
            runtime_seconds=float(data.get("runtime_seconds", 0.0)),
            error=data.get("error"),
        )


@dataclass
class SystemLog:
    """システム全体ログ"""
    timestamp: datetime
    level: str  # info, warning, error
    component: str
    message: str
    details: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "timestamp": self.timestamp.isoformat(),
            "level": self.level,
            "component": self.component,
            "message": self.message,
            "details": self.details
        }


@dataclass
class SessionSummary:
    """実行セッション全体のサマリー"""
    session_id: str
    command: str
    start_time: datetime
    end_time: datetime
    total_items: int
    successful_items: int
    failed_items: int
    trace_records: int
    artifacts: List[str]
    error_count: int

    @property
    def success_rate(self) -> float:
        """成功率"""
        if self.total_items == 0:
            return 0.0
        return self.successful_items / self.total_items

    @property
    def duration_seconds(self) -> float:
        return (self.end_time - self.start_time).total_seconds()

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "session_id": self.session_id,
            "command": self.command,
            "start_time": self.start_time.isoformat(),
            "end_time": self.end_time.isoformat(),
            "duration_seconds": self.duration_seconds,
            "total_items": self.total_items,
            "successful_items": self.successful_items,
            "failed_items": self.failed_items,
            "success_rate": self.success_rate,
            "trace_records": self.trace_records,
            "artifacts": self.artifacts,
            "error_count": self.error_count,
        }


@dataclass
class EmTrace:
    """EM ドライバーの出力トレース（記録列とストライドごとのカーネル）"""
    records: List[TraceRecord] = field(default_factory=list)
    kernels: Dict[int, np.ndarray] = field(default_factory=dict)
    hqs: List[HqsRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def data_fits(self) -> List[float]:
        return [r.data_fit for r in self.records]

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "records": [r.to_dict() for r in self.records],
            "kernel_steps": sorted(self.kernels),
            "hqs": [r.to_dict() for r in self.hqs],
        }


def _mean(values: List[Optional[float]]) -> Optional[float]:
    finite = [v for v in values if v is not None]
    return float(np.mean(finite)) if finite else None


@dataclass
class MetricsReport:
    """ベンチマーク全体の結果（項目ごとの記録と平均）"""
    records: List[MetricsRecord] = field(default_factory=list)
    algo: str = ""
    kernel_alignment: str = "exhaustive-circular-shift"

    @property
    def succeeded(self) -> List[MetricsRecord]:
        return [r for r in self.records if r.ok]

    def aggregate(self) -> Dict[str, Optional[float]]:
        """成功した項目の平均"""
        ok = self.succeeded
        return {
            "psnr": _mean([r.psnr for r in ok]),
            "psnr_sa": _mean([r.psnr_sa for r in ok]),
            "kernel_mse": _mean([r.kernel_mse for r in ok]),
            "reblur": _mean([r.reblur for r in ok]),
            "runtime_seconds": _mean([r.runtime_seconds for r in ok]),
        }

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        means = self.aggregate()
        means.pop("runtime_seconds")
        return {
            "algo": self.algo,
            "kernel_alignment": self.kernel_alignment,
            "items": len(self.records),
            "failed": len(self.records) - len(self.succeeded),
            "means": means,
        }
