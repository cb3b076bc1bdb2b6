"""
YAML loader and validator for prior specifications and run presets
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import structlog
import yaml

from config import Config
from models.settings import EmConfig, MStepConfig, ScheduleConfig
from .errors import ConfigError
from .score_models import GmmPrior, ScoreModel, StationaryGaussianPrior
from .tensor_io import is_image_file, read_image, read_rtf

PRIOR_TYPES = ("gaussian", "gaussian_power_law", "gaussian_fit", "gmm")


@dataclass
class PriorSpec:
    """事前分布の仕様（画像サイズが決まった時点で build する）"""
    name: str
    type: str
    params: Dict[str, Any] = field(default_factory=dict)
    source: Optional[Path] = None

    def build(self, shape: Tuple[int, int, int]) -> ScoreModel:
        """(H, W, C) に合わせてスコアモデルを生成"""
        h, w, c = shape
        p = self.params
        if self.type == "gaussian":
            mean, spectrum = self._mean_image(shape), self._spectrum(shape)
            try:
                return StationaryGaussianPrior(mean, spectrum)
            except ValueError as e:
                raise ConfigError(f"Invalid gaussian prior {self.source or self.name}: {e}")
        if self.type == "gaussian_power_law":
            return StationaryGaussianPrior.from_power_law(
                h, w, c,
                mean=float(p.get("mean", 0.5)),
                pixel_std=float(p.get("pixel_std", 0.2)),
                exponent=float(p.get("exponent", 1.5)),
                floor=float(p.get("floor", 1e-4)),
            )
        if self.type == "gaussian_fit":
            images = self._fit_images(shape)
            return StationaryGaussianPrior.fit(images, floor=float(p.get("floor", 1e-6)))
        if self.type == "gmm":
            weights = p.get("weights")
            weights = None if weights is None else np.asarray(weights, dtype=np.float64)
            means = self._gmm_means(shape)
            try:
                return GmmPrior(means, float(p["variance"]), weights)
            except ValueError as e:
                raise ConfigError(f"Invalid gmm prior {self.source or self.name}: {e}")
        raise ConfigError(f"Unknown prior type '{self.type}' in {self.source or self.name}")

    def _resolve(self, value) -> Path:
        """YAML からの相対パスを解決"""
        path = Path(value)
        if not path.is_absolute() and self.source is not None:
            path = self.source.parent / path
        return path

    def _read_tensor(self, value, shape, field_name: str) -> np.ndarray:
        """RTF1 を読み、(H, W, C) か (H, W, 1) であることを確認"""
        arr = read_rtf(self._resolve(value))
        h, w, c = shape
        if arr.shape[:2] != (h, w) or arr.shape[2] not in (1, c):
            raise ConfigError(f"Prior '{self.name}': {field_name} {value} has shape {arr.shape}, "
                              f"expected {(h, w, c)}")
        return np.broadcast_to(arr, (h, w, c)).copy()

    def _mean_image(self, shape) -> np.ndarray:
        mean = self.params.get("mean", 0.5)
        if isinstance(mean, (int, float)):
            return np.full(shape, float(mean))
        return self._read_tensor(mean, shape, "mean")

    def _spectrum(self, shape) -> np.ndarray:
        return self._read_tensor(self.params["spectrum"], shape, "spectrum")

    def _gmm_means(self, shape) -> np.ndarray:
        """明示された平均画像のリスト、またはべき乗則テクスチャからの抽選"""
        p = self.params
        if "means" in p:
            return np.stack([self._read_tensor(v, shape, "means") for v in p["means"]])
        h, w, c = shape
        base = StationaryGaussianPrior.from_power_law(
            h, w, c,
            mean=float(p.get("mean", 0.5)),
            pixel_std=float(p.get("pixel_std", 0.2)),
            exponent=float(p.get("exponent", 1.5)),
        )
        return base.sample(np.random.default_rng(int(p.get("seed", 0))), int(p["components"]))

    def _fit_images(self, shape) -> np.ndarray:
        root = self._resolve(self.params["images"])
        files = sorted(p for p in root.iterdir() if is_image_file(p)) if root.exists() else []
        images = [read_image(p) for p in files]
        images = [im for im in images if im.shape == tuple(shape)]
        if not images:
            raise ConfigError(f"No images of shape {tuple(shape)} under {root} for prior '{self.name}'")
        return np.stack(images)

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {"name": self.name, "type": self.type, "params": dict(self.params)}


@dataclass
class RunPreset:
    """実行プリセット（EmConfig 一式）"""
    name: str
    description: str
    em: EmConfig
    prior: Optional[str] = None

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {"name": self.name, "description": self.description, "prior": self.prior, "em": self.em.to_dict()}


def _dataclass_kwargs(cls, section: Dict, section_name: str, source: str) -> Dict:
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"Unknown field(s) {unknown} in section '{section_name}' of {source}")
    return dict(section)


class ConfigLoader:
    """configs/ 以下の priors/*.yaml と presets/*.yaml を発見・読み込み・検証・キャッシュする"""

    def __init__(self, configs_dir: Optional[str] = None):
        self.configs_dir = Config.get_configs_directory(configs_dir)
        self.logger = structlog.get_logger(__name__)
        self.loaded_priors: Dict[str, PriorSpec] = {}
        self.loaded_presets: Dict[str, RunPreset] = {}

    def _discover(self, subdir: str) -> List[str]:
        directory = self.configs_dir / subdir
        if not directory.exists():
            self.logger.warning("configs_dir_missing", directory=str(directory))
            return []
        names = [p.stem for p in directory.glob("*.yaml")] + [p.stem for p in directory.glob("*.yml")]
        return sorted(set(names))

    def discover_priors(self) -> List[str]:
        return self._discover("priors")

    def discover_presets(self) -> List[str]:
        return self._discover("presets")

    def _find(self, subdir: str, name: str) -> Path:
        candidate = Path(name)
        if candidate.suffix in (".yaml", ".yml") and candidate.exists():
            return candidate
        for suffix in (".yaml", ".yml"):
            path = self.configs_dir / subdir / f"{name}{suffix}"
            if path.exists():
                return path
        raise FileNotFoundError(f"{subdir[:-1].capitalize()} file not found: {name}")

    def _read(self, path: Path) -> Dict:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Top level of {path} must be a mapping")
        return data

    def load_prior(self, name: str) -> PriorSpec:
        """事前分布 YAML を読み込む"""
        if name in self.loaded_priors:
            return self.loaded_priors[name]
        path = self._find("priors", name)
        data = self._read(path)
        self._validate_prior_structure(data, path)
        section = data["prior"]
        params = {k: v for k, v in section.items() if k not in ("name", "type")}
        spec = PriorSpec(name=section["name"], type=section["type"], params=params, source=path)
        self.loaded_priors[name] = spec
        self.logger.info("prior_loaded", name=spec.name, type=spec.type)
        return spec

    def _validate_prior_structure(self, data: Dict, path: Path):
        """事前分布 YAML の構造検証"""
        if "prior" not in data:
            raise ConfigError(f"Missing required section 'prior' in {path}")
        section = data["prior"]
        for key in ("name", "type"):
            if key not in section:
                raise ConfigError(f"Missing required field '{key}' in prior section of {path}")
        if section["type"] not in PRIOR_TYPES:
            raise ConfigError(f"Unknown prior type '{section['type']}' in {path} (expected one of {PRIOR_TYPES})")
        if section["type"] == "gaussian_fit" and "images" not in section:
            raise ConfigError(f"Missing required field 'images' for gaussian_fit prior in {path}")
        if section["type"] == "gaussian" and "spectrum" not in section:
            raise ConfigError(f"Missing required field 'spectrum' for gaussian prior in {path}")
        if section["type"] == "gmm":
            if "variance" not in section:
                raise ConfigError(f"Missing required field 'variance' for gmm prior in {path}")
            if "components" not in section and "means" not in section:
                raise ConfigError(f"gmm prior in {path} needs either 'components' or 'means'")
            if "means" in section and not isinstance(section["means"], list):
                raise ConfigError(f"Field 'means' must be a list of RTF1 paths in {path}")
            if "weights" in section:
                count = len(section["means"]) if "means" in section else int(section["components"])
                if not isinstance(section["weights"], list) or len(section["weights"]) != count:
                    raise ConfigError(f"Field 'weights' must list one weight per component ({count}) in {path}")
            if float(section["variance"]) <= 0:
                raise ConfigError(f"Field 'variance' must be > 0 in {path}")

    def load_preset(self, name: str) -> RunPreset:
        """実行プリセット YAML を EmConfig に変換"""
        if name in self.loaded_presets:
            return self.loaded_presets[name]
        path = self._find("presets", name)
        data = self._read(path)
        if "preset" not in data:
            raise ConfigError(f"Missing required section 'preset' in {path}")
        info = data["preset"]
        if "name" not in info:
            raise ConfigError(f"Missing required field 'name' in preset section of {path}")

        em_section = dict(data.get("em") or {})
        for nested in ("schedule", "mstep"):
            if nested in em_section:
                raise ConfigError(f"Section '{nested}' must be top-level, not inside 'em' ({path})")
        try:
            schedule = ScheduleConfig(**_dataclass_kwargs(ScheduleConfig, data.get("schedule") or {}, "schedule", str(path)))
            mstep = MStepConfig(**_dataclass_kwargs(MStepConfig, data.get("mstep") or {}, "mstep", str(path)))
            em = EmConfig(schedule=schedule, mstep=mstep, **_dataclass_kwargs(EmConfig, em_section, "em", str(path)))
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Invalid value in preset {path}: {e}")

        preset = RunPreset(name=info["name"], description=info.get("description", ""), em=em, prior=info.get("prior"))
        self.loaded_presets[name] = preset
        self.logger.info("preset_loaded", name=preset.name, guidance=em.guidance.value, T=schedule.T)
        return preset

    def list_summary(self) -> List[Dict[str, Any]]:
        """全設定ファイルのサマリー"""
        summaries = []
        for name in self.discover_priors():
            try:
                summaries.append({"kind": "prior", **self.load_prior(name).to_dict()})
            except Exception as e:
                summaries.append({"kind": "prior", "name": name, "error": str(e)})
        for name in self.discover_presets():
            try:
                preset = self.load_preset(name)
                summaries.append({"kind": "preset", "name": preset.name, "description": preset.description})
            except Exception as e:
                summaries.append({"kind": "preset", "name": name, "error": str(e)})
        return summaries
