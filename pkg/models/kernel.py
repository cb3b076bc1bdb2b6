"""
Blur kernel data model
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class BlurKernel:
    """k×k の非負カーネル（要素和 1、k は奇数）"""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[-1] == 1:
            arr = arr[:, :, 0]
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"Kernel must be square, got shape {arr.shape}")
        if arr.shape[0] % 2 == 0:
            raise ValueError(f"Kernel size must be odd, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Kernel contains non-finite entries")
        if np.any(arr < 0):
            raise ValueError(f"Kernel has negative entries (min={arr.min():.3e})")
        total = float(arr.sum())
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"Kernel must sum to 1 (sum={total!r})")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def center(self) -> int:
        return self.size // 2

    @classmethod
    def delta(cls, size: int) -> "BlurKernel":
        """中心に 1 を置いたデルタカーネル"""
        grid = np.zeros((size, size))
        grid[size // 2, size // 2] = 1.0
        return cls(grid)

    @classmethod
    def uniform(cls, size: int) -> "BlurKernel":
        return cls(np.full((size, size), 1.0 / (size * size)))

    @classmethod
    def gaussian(cls, size: int, std: float) -> "BlurKernel":
        """離散化した等方ガウシアン"""
        if std <= 0:
            return cls.delta(size)
        r = np.arange(size) - size // 2
        g = np.exp(-0.5 * (r / std) ** 2)
        grid = np.outer(g, g)
        return cls.normalized(grid)

    @classmethod
    def normalized(cls, grid: np.ndarray) -> "BlurKernel":
        """負値を切り捨てて和を 1 に正規化する"""
        arr = np.clip(np.asarray(grid, dtype=np.float64), 0.0, None)
        total = arr.sum()
        if total <= 0:
            raise ValueError("Kernel grid has no positive mass")
        arr = arr / total
        # 丸め誤差の残りを最大要素に寄せる
        arr[np.unravel_index(np.argmax(arr), arr.shape)] += 1.0 - arr.sum()
        return cls(arr)

    def padded(self, size: int) -> np.ndarray:
        """中心を保ったまま size×size にゼロパディング"""
        if size < self.size:
            raise ValueError(f"Cannot pad kernel of size {self.size} to {size}")
        off = (size - self.size) // 2
        out = np.zeros((size, size))
        out[off:off + self.size, off:off + self.size] = self.data
        return out

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "size": self.size,
            "sum": float(self.data.sum()),
            "max": float(self.data.max()),
        }
