"""
Benchmark orchestration: regularizer sweeps for non-blind kernel
estimation and per-item blind deblurring runs over a dataset manifest
"""

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import orjson
import structlog
from rich.table import Table

from models.log import ManifestRecord, MetricsRecord, MetricsReport
from models.settings import EmConfig, MStepConfig, RegularizerKind
from .degrade import degrade, item_seed, load_manifest
from .em import diffusion_em, fast_diffusion_em, init_kernel
from .log_manager import read_jsonl, write_jsonl
from .metrics import kernel_mse, psnr_per_particle, psnr_sample_average, reblur_per_particle
from .mstep import KernelRegularizer, hqs_mstep, make_regularizer
from .score_models import ScoreModel
from .tensor_io import read_kernel, read_rtf, write_kernel, write_rtf
from .workers import run_items

logger = structlog.get_logger(__name__)

# σ = 0 のスイープ点でもデータ解が定義されるよう下限を設ける
SWEEP_SIGMA_FLOOR = 1e-4
REPORT_NAME = "report.jsonl"
TIMING_NAME = "timing.jsonl"
SUMMARY_NAME = "report_summary.json"
SWEEP_CSV_NAME = "sweep.csv"

ModelFactory = Callable[[Tuple[int, int, int]], ScoreModel]


@dataclass
class SweepRow:
    sigma: float
    regularizer: str
    mean_kernel_mse: float
    items: int
    lam: float = 0.0

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "sigma": self.sigma,
            "regularizer": self.regularizer,
            "lam": self.lam,
            "mean_kernel_mse": self.mean_kernel_mse,
            "items": self.items,
        }


def _usable(records: List[ManifestRecord]) -> List[ManifestRecord]:
    return [r for r in records if not r.error]


def regularizer_sweep(manifest_path: Path, sigmas: Sequence[float], regs: Sequence[str], mstep: MStepConfig,
                      denoiser=None, seed: int = 0, kernel_init: str = "gaussian:k/6",
                      threads: int = 1, lams: Optional[Mapping[str, Sequence[float]]] = None) -> List[SweepRow]:
    """
    Non-blind kernel estimation with the true sharp image as the only
    sample, for every (σ, regularizer) pair. Each item is re-degraded at
    each σ with a noise draw shared across regularizers.

    lams maps a regularizer name to candidate λ values; each row keeps the
    candidate with the lowest mean kernel MSE at that σ. Regularizers not
    in the mapping run at mstep.lam.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records = _usable(load_manifest(manifest_path))
    regularizers: Dict[str, KernelRegularizer] = {}
    candidates: Dict[str, List[float]] = {}
    for name in regs:
        if RegularizerKind(name) == RegularizerKind.PNP and denoiser is None:
            raise ValueError("Regularizer sweep with 'pnp' needs denoiser weights (--weights)")
        regularizers[name] = make_regularizer(name, denoiser=denoiser)
        candidates[name] = [float(v) for v in (lams or {}).get(name, [mstep.lam])]
        if not candidates[name] or min(candidates[name]) < 0:
            raise ValueError(f"Regularizer '{name}' needs non-negative lambda candidates, got {candidates[name]}")

    def _one(index: int, record: ManifestRecord) -> Dict[Tuple[float, str, float], float]:
        x = read_rtf(root / record.clean_path)
        truth = read_kernel(root / record.kernel_path)
        K0 = init_kernel(kernel_init, truth.size)
        out = {}
        for s_index, sigma in enumerate(sigmas):
            rng = np.random.default_rng(item_seed(seed, index * len(sigmas) + s_index))
            y = degrade(x, truth, sigma, rng)
            for name, reg in regularizers.items():
                for lam in candidates[name]:
                    config = replace(mstep, kernel_size=truth.size, lam=lam)
                    K = hqs_mstep(y, x[None], max(sigma, SWEEP_SIGMA_FLOOR), config, K0, reg)
                    out[(sigma, name, lam)] = kernel_mse(K, truth)
        return out

    logger.info("sweep_start", items=len(records), sigmas=list(sigmas), regs=list(regs), lams=candidates)
    results = run_items(records, _one, threads)
    rows = []
    for sigma in sigmas:
        for name in regs:
            best = None
            for lam in candidates[name]:
                values = [r[(sigma, name, lam)] for r in results]
                mean = float(np.mean(values)) if values else float("nan")
                if best is None or mean < best.mean_kernel_mse:
                    best = SweepRow(sigma=float(sigma), regularizer=name, mean_kernel_mse=mean,
                                    items=len(values), lam=lam)
            rows.append(best)
    logger.info("sweep_done", rows=len(rows))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: Path) -> Path:
    """プロット用 CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["sigma", "regularizer", "lam", "mean_kernel_mse", "items"])
        for row in rows:
            writer.writerow([repr(row.sigma), row.regularizer, repr(row.lam), repr(row.mean_kernel_mse), row.items])
    return path


def sweep_table(rows: Sequence[SweepRow]) -> Table:
    """σ × 正則化の表"""
    regs = list(dict.fromkeys(r.regularizer for r in rows))
    table = Table(title="Kernel MSE by noise level and regularizer")
    table.add_column("sigma", justify="right")
    for name in regs:
        table.add_column(name, justify="right")
    for sigma in dict.fromkeys(r.sigma for r in rows):
        cells = {r.regularizer: r for r in rows if r.sigma == sigma}
        table.add_row(f"{sigma:.4f}", *[f"{cells[name].mean_kernel_mse:.3e} (λ={cells[name].lam:g})" for name in regs])
    return table


def run_item(record: ManifestRecord, root: Path, config: EmConfig, algo: str, model_factory: ModelFactory,
             regularizer: Optional[KernelRegularizer] = None, out_dir: Optional[Path] = None) -> MetricsRecord:
    """1 項目の blind deblurring と評価"""
    name = Path(record.degraded_path).stem
    start = time.perf_counter()
    x = read_rtf(root / record.clean_path)
    truth = read_kernel(root / record.kernel_path)
    y = read_rtf(root / record.degraded_path)
    model = model_factory(y.shape)

    driver = fast_diffusion_em if algo == "fastem" else diffusion_em
    ensemble, kernel, _ = driver(y, record.sigma, config, model, regularizer=regularizer, show_progress=False)
    runtime = time.perf_counter() - start

    if out_dir is not None:
        write_kernel(out_dir / "kernels" / f"{name}.rtf", kernel)
        write_rtf(out_dir / "restored" / f"{name}.rtf", ensemble.mean())

    return MetricsRecord(
        item=name,
        psnr=float(np.mean(psnr_per_particle(ensemble, x))),
        psnr_sa=psnr_sample_average(ensemble, x),
        psnr_particles=psnr_per_particle(ensemble, x),
        kernel_mse=kernel_mse(kernel, truth),
        reblur=float(np.mean(reblur_per_particle(y, ensemble, kernel, record.sigma))),
        runtime_seconds=runtime,
    )


def benchmark(manifest_path: Path, config: EmConfig, algo: str, model_factory: ModelFactory, out_dir: Path,
              regularizer: Optional[KernelRegularizer] = None, threads: int = 1, log_manager=None) -> MetricsReport:
    """
    Runs the configured algorithm on every manifest item and writes
    report.jsonl (deterministic), timing.jsonl (wall-clock) and a summary.
    Failing items are recorded with their error and the run continues.
    """
    if algo not in ("em", "fastem"):
        raise ValueError(f"Unknown algorithm: {algo} (expected em or fastem)")
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_manifest(manifest_path) if manifest_path.exists() else []

    def _one(index: int, record: ManifestRecord) -> MetricsRecord:
        item_config = replace(config, seed=item_seed(config.seed, index))
        try:
            if record.error:
                raise ValueError(f"dataset item failed: {record.error}")
            return run_item(record, root, item_config, algo, model_factory, regularizer, out_dir)
        except Exception as e:
            logger.warning("benchmark_item_failed", item=record.degraded_path, error=str(e))
            return MetricsRecord(item=Path(record.degraded_path).stem, error=f"{type(e).__name__}: {e}")

    logger.info("benchmark_start", items=len(records), algo=algo, guidance=config.guidance.value)
    metrics = run_items(records, _one, threads)
    report = MetricsReport(records=list(metrics), algo=f"{algo}/{config.guidance.value}")

    write_jsonl(out_dir / REPORT_NAME, [m.to_dict() for m in metrics])
    write_jsonl(out_dir / TIMING_NAME, [{"item": m.item, "runtime_seconds": m.runtime_seconds} for m in metrics])
    (out_dir / SUMMARY_NAME).write_bytes(orjson.dumps(report.to_dict(), option=orjson.OPT_INDENT_2))

    if log_manager is not None:
        for m in metrics:
            log_manager.log_item(m.ok)
            if not m.ok:
                log_manager.log_system_event("error", "benchmark", "item_failed", {"item": m.item, "error": m.error})
        for name in (REPORT_NAME, TIMING_NAME, SUMMARY_NAME):
            log_manager.log_artifact(out_dir / name)

    logger.info("benchmark_done", items=len(metrics), failed=len(metrics) - len(report.succeeded))
    return report


def load_report(path: Path) -> List[MetricsRecord]:
    """report.jsonl を読み戻す"""
    return [MetricsRecord.from_dict(row) for row in read_jsonl(path)]


def report_table(report: MetricsReport) -> Table:
    """項目ごとの評価値と平均"""
    table = Table(title=f"Benchmark ({report.algo})")
    for column in ("item", "PSNR", "PSNR-SA", "kernel MSE", "reblur", "status"):
        table.add_column(column, justify="left" if column in ("item", "status") else "right")

    def fmt(value, spec):
        return "-" if value is None else format(value, spec)

    for r in report.records:
        table.add_row(r.item, fmt(r.psnr, ".2f"), fmt(r.psnr_sa, ".2f"), fmt(r.kernel_mse, ".3e"),
                      fmt(r.reblur, ".3e"), "ok" if r.ok else r.error)
    means = report.aggregate()
    table.add_row("mean", fmt(means["psnr"], ".2f"), fmt(means["psnr_sa"], ".2f"), fmt(means["kernel_mse"], ".3e"),
                  fmt(means["reblur"], ".3e"), f"{len(report.succeeded)}/{len(report.records)}")
    return table
