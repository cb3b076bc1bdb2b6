"""
Synthetic motion-blur kernels, degraded observations and benchmark datasets
"""

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import orjson
import structlog
from scipy.ndimage import gaussian_filter

from models.kernel import BlurKernel
from models.log import ManifestRecord
from models.settings import DegradationConfig
from .log_manager import read_jsonl
from .tensor_io import is_image_file, read_image, write_kernel, write_rtf
from .tensor_ops import circular_convolve
from .workers import run_items

logger = structlog.get_logger(__name__)

MANIFEST_NAME = "manifest.jsonl"


def _trajectory(config: DegradationConfig, rng: np.random.Generator) -> np.ndarray:
    """慣性付きランダム軌跡 (steps+1, 2)。速度は AR(1): v ← ρv + η"""
    steps = config.trajectory_steps
    velocity = rng.normal(0.0, config.step_std, size=2)
    positions = np.zeros((steps + 1, 2))
    for i in range(steps):
        positions[i + 1] = positions[i] + velocity
        velocity = config.inertia * velocity + rng.normal(0.0, config.step_std, size=2)
    return positions


def _splat(points: np.ndarray, size: int) -> np.ndarray:
    """バイリニアで k×k グリッドに書き込む"""
    grid = np.zeros((size, size))
    i0 = np.floor(points[:, 0]).astype(int)
    j0 = np.floor(points[:, 1]).astype(int)
    di = points[:, 0] - i0
    dj = points[:, 1] - j0
    for oi, oj, wgt in (
        (0, 0, (1 - di) * (1 - dj)),
        (0, 1, (1 - di) * dj),
        (1, 0, di * (1 - dj)),
        (1, 1, di * dj),
    ):
        ii = np.clip(i0 + oi, 0, size - 1)
        jj = np.clip(j0 + oj, 0, size - 1)
        np.add.at(grid, (ii, jj), wgt)
    return grid


def sample_motion_kernel(config: DegradationConfig, rng: Optional[np.random.Generator] = None) -> BlurKernel:
    """
    Camera-shake style kernel: inertial random walk, rasterized with
    bilinear splatting, lightly smoothed and normalized onto the simplex.
    """
    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    k = config.kernel_size
    if config.trajectory_steps == 0:
        return BlurKernel.delta(k)

    points = _trajectory(config, rng)
    points -= points.mean(axis=0)
    # スプラットが窓からはみ出さないよう半径を制限する
    limit = (k - 1) / 2.0 - 1.0
    extent = np.abs(points).max()
    if extent > limit > 0:
        points *= limit / extent
    points += k // 2

    grid = _splat(points, k)
    if config.smooth_std > 0:
        grid = gaussian_filter(grid, config.smooth_std, mode="constant")
    return BlurKernel.normalized(grid)


def sample_kernel_bank(count: int, sizes: Sequence[int], rng: np.random.Generator,
                       base: Optional[DegradationConfig] = None) -> List[BlurKernel]:
    """サイズ混在のモーションカーネル集合（デノイザー学習用）"""
    base = base or DegradationConfig()
    kernels = []
    for _ in range(count):
        k = int(rng.choice(sizes))
        cfg = DegradationConfig(
            sigma=base.sigma, kernel_size=k, rng_seed=base.rng_seed,
            trajectory_steps=base.trajectory_steps, step_std=base.step_std * k / 11.0,
            inertia=base.inertia, smooth_std=base.smooth_std,
        )
        kernels.append(sample_motion_kernel(cfg, rng))
    return kernels


def degrade(x: np.ndarray, kernel: BlurKernel, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """y = Hx + σg（クリップなし）"""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0 (got {sigma})")
    blurred = circular_convolve(x, kernel)
    if sigma == 0:
        return blurred
    return blurred + sigma * rng.standard_normal(blurred.shape)


def item_seed(master_seed: int, index: int) -> int:
    """マスターシードとインデックスから項目ごとのシードを導出"""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


@dataclass
class DatasetResult:
    manifest_path: Path
    records: List[ManifestRecord]

    @property
    def failures(self) -> List[ManifestRecord]:
        return [r for r in self.records if r.error]


def dataset_names(sources: List[Path]) -> List[str]:
    """出力ファイル名。拡張子違いで stem が重なる画像は "{stem}_{ext}" にする"""
    counts = Counter(p.stem for p in sources)
    names: List[str] = []
    for p in sources:
        name = p.stem if counts[p.stem] == 1 else f"{p.stem}_{p.suffix.lstrip('.').lower()}"
        base, k = name, 2
        while name in names:
            name = f"{base}_{k}"
            k += 1
        names.append(name)
    return names


def make_dataset(images_dir: Path, out_dir: Path, config: DegradationConfig, threads: int = 1) -> DatasetResult:
    """
    ディレクトリ内の画像ごとに (clean, kernel, degraded) を書き出し、
    manifest.jsonl にパス・σ・シードを記録する。読めない画像はエラー行として残す。
    """
    images_dir = Path(images_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = sorted(p for p in images_dir.iterdir() if is_image_file(p)) if images_dir.exists() else []
    names = dataset_names(sources)
    logger.info("dataset_start", images=len(sources), sigma=config.sigma, ksize=config.kernel_size)

    def _process(index: int, source: Path) -> ManifestRecord:
        seed = item_seed(config.rng_seed, index)
        stem = names[index]
        record = ManifestRecord(
            clean_path=f"clean/{stem}.rtf",
            kernel_path=f"kernels/{stem}.rtf",
            degraded_path=f"degraded/{stem}.rtf",
            sigma=config.sigma,
            seed=seed,
            source=source.name,
        )
        try:
            x = read_image(source)
            if min(x.shape[:2]) < config.kernel_size:
                raise ValueError(f"image {x.shape[:2]} smaller than kernel {config.kernel_size}")
            rng = np.random.default_rng(seed)
            kernel = sample_motion_kernel(config, rng)
            y = degrade(x, kernel, config.sigma, rng)
            write_rtf(out_dir / record.clean_path, x)
            write_kernel(out_dir / record.kernel_path, kernel)
            write_rtf(out_dir / record.degraded_path, y)
        except Exception as e:
            logger.warning("dataset_item_failed", source=str(source), error=str(e))
            record.error = f"{type(e).__name__}: {e}"
        return record

    records = run_items(sources, _process, threads)

    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "wb") as f:
        for record in records:
            f.write(orjson.dumps(record.to_dict()) + b"\n")

    logger.info("dataset_done", items=len(records), failures=sum(1 for r in records if r.error))
    return DatasetResult(manifest_path=manifest_path, records=records)


def load_manifest(path: Path) -> List[ManifestRecord]:
    """manifest.jsonl を読み込む"""
    return [ManifestRecord.from_dict(row) for row in read_jsonl(path)]
