"""
Particle ensemble and diffusion schedule data models
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np


@dataclass
class ParticleEnsemble:
    """n 個の粒子 (n, H, W, C) と粒子ごとの乱数ストリーム ID"""
    particles: np.ndarray
    stream_ids: List[int] = field(default_factory=list)

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=np.float64)
        if self.particles.ndim != 4:
            raise ValueError(f"Ensemble must be (n, H, W, C), got shape {self.particles.shape}")
        if not self.stream_ids:
            self.stream_ids = list(range(self.particles.shape[0]))
        if len(self.stream_ids) != self.particles.shape[0]:
            raise ValueError("stream_ids length must match particle count")

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def image_shape(self) -> tuple:
        return self.particles.shape[1:]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, index: int) -> np.ndarray:
        return self.particles[index]

    def mean(self) -> np.ndarray:
        """粒子平均画像"""
        return self.particles.mean(axis=0)

    def permuted(self, order: Sequence[int]) -> "ParticleEnsemble":
        order = list(order)
        return ParticleEnsemble(self.particles[order], [self.stream_ids[i] for i in order])

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "n": self.n,
            "image_shape": list(self.image_shape),
            "stream_ids": list(self.stream_ids),
        }


@dataclass
class DiffusionSchedule:
    """
    Per-timestep tables of length T+1; index 0 is the data end
    (alpha_bar[0] = 1) and index T the noise end.
    """
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma_tilde: np.ndarray
    zeta: np.ndarray
    r: np.ndarray
    sigma_tilde_mode: str = "posterior"
    zeta_mode: str = "sqrt-alphabar"
    r_mode: str = "variance-ratio"

    def __len__(self) -> int:
        return self.T

    def timesteps(self) -> range:
        """T から 1 へ降順"""
        return range(self.T, 0, -1)

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "T": self.T,
            "beta_min": float(self.beta[1]),
            "beta_max": float(self.beta[self.T]),
            "alpha_bar_T": float(self.alpha_bar[self.T]),
            "sigma_tilde_mode": self.sigma_tilde_mode,
            "zeta_mode": self.zeta_mode,
            "r_mode": self.r_mode,
        }
