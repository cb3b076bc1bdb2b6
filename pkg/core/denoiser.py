"""
Bias-free convolutional kernel denoiser with a noise-level input channel

A DnCNN-style stack of circular 3×3 convolutions with ReLU between blocks
and no bias terms, so the composed network is positively homogeneous:
net(a·x, a·σ) = a·net(x, σ). Forward and backward passes are written out
in numpy; training uses momentum SGD.
"""

import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from tqdm import tqdm

from config import Config, DiffusionConfig
from models.kernel import BlurKernel
from models.settings import TrainConfig
from .errors import FormatError, ShapeError, TrainingDivergedError

logger = structlog.get_logger(__name__)

WEIGHTS_MAGIC = b"DNW1"
WEIGHTS_VERSION = 1
_HEADER = struct.Struct("<4sII")
_LAYER = struct.Struct("<IIII")

# 3×3 近傍のオフセット (dy, dx)
_OFFSETS = [(dy, dx) for dy in range(3) for dx in range(3)]


def _shift(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """out[..., i, j] = x[..., i + dy − 1, j + dx − 1]（循環）"""
    return np.roll(x, (1 - dy, 1 - dx), axis=(-2, -1))


def _unshift(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    return np.roll(x, (dy - 1, dx - 1), axis=(-2, -1))


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) → (B, C·9, H·W)。列の並びは weight.reshape(O, C·9) と一致"""
    b, c, h, w = x.shape
    cols = np.stack([_shift(x, dy, dx) for dy, dx in _OFFSETS], axis=2)
    return cols.reshape(b, c * 9, h * w)


def _col2im(cols: np.ndarray, shape: Tuple[int, int, int, int]) -> np.ndarray:
    """_im2col の随伴"""
    b, c, h, w = shape
    cols = cols.reshape(b, c, 9, h, w)
    out = np.zeros(shape)
    for k, (dy, dx) in enumerate(_OFFSETS):
        out += _unshift(cols[:, :, k], dy, dx)
    return out


def conv3x3(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """x (B, Cin, H, W), weight (Cout, Cin, 3, 3) → (B, Cout, H, W)"""
    b, _, h, w = x.shape
    out = np.matmul(weight.reshape(weight.shape[0], -1), _im2col(x))
    return out.reshape(b, weight.shape[0], h, w)


def conv3x3_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(∂L/∂x, ∂L/∂weight)"""
    cols = _im2col(x)
    g = grad_out.reshape(grad_out.shape[0], grad_out.shape[1], -1)
    grad_w = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
    grad_cols = np.matmul(weight.reshape(weight.shape[0], -1).T, g)
    return _col2im(grad_cols, x.shape), grad_w


class DenoiserNet:
    """残差型カーネルデノイザー（バイアスなし）"""

    def __init__(self, weights: Sequence[np.ndarray], canvas: int = DiffusionConfig.DENOISER_CANVAS):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.canvas = canvas
        self._validate()

    def _validate(self):
        if not self.weights:
            raise ShapeError("Denoiser needs at least one layer")
        expected_in = 2
        for i, w in enumerate(self.weights):
            if w.ndim != 4 or w.shape[2:] != (3, 3):
                raise ShapeError(f"Layer {i}: weights must be (out, in, 3, 3), got {w.shape}")
            if w.shape[1] != expected_in:
                raise ShapeError(f"Layer {i}: expected {expected_in} input channels, got {w.shape[1]}")
            expected_in = w.shape[0]
        if expected_in != 1:
            raise ShapeError(f"Last layer must output 1 channel, got {expected_in}")

    @classmethod
    def zeros(cls, blocks: int = DiffusionConfig.DENOISER_BLOCKS, channels: int = DiffusionConfig.DENOISER_CHANNELS,
              canvas: int = DiffusionConfig.DENOISER_CANVAS) -> "DenoiserNet":
        return cls([np.zeros(s) for s in cls.layer_shapes(blocks, channels)], canvas)

    @classmethod
    def initialize(cls, rng: np.random.Generator, blocks: int = DiffusionConfig.DENOISER_BLOCKS,
                   channels: int = DiffusionConfig.DENOISER_CHANNELS,
                   canvas: int = DiffusionConfig.DENOISER_CANVAS) -> "DenoiserNet":
        """He 初期化。最終層はゼロなので初期状態は恒等写像"""
        shapes = cls.layer_shapes(blocks, channels)
        weights = [rng.normal(0.0, np.sqrt(2.0 / (s[1] * 9)), size=s) for s in shapes[:-1]]
        weights.append(np.zeros(shapes[-1]))
        return cls(weights, canvas)

    @staticmethod
    def layer_shapes(blocks: int, channels: int) -> List[Tuple[int, int, int, int]]:
        if blocks < 2:
            raise ShapeError(f"Denoiser needs >= 2 blocks (got {blocks})")
        shapes = [(channels, 2, 3, 3)]
        shapes += [(channels, channels, 3, 3)] * (blocks - 2)
        shapes.append((1, channels, 3, 3))
        return shapes

    def _inputs(self, grids: np.ndarray, sigma: Union[float, np.ndarray]) -> np.ndarray:
        sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64).reshape(-1, 1, 1), grids.shape)
        return np.stack([grids, sig], axis=1)

    def forward(self, grids: np.ndarray, sigma: Union[float, np.ndarray], cache: Optional[List] = None) -> np.ndarray:
        """
        grids (B, H, W), sigma scalar or (B,) → denoised (B, H, W).
        cache を渡すと逆伝播用の中間値を保存する。
        """
        grids = np.asarray(grids, dtype=np.float64)
        h = self._inputs(grids, sigma)
        last = len(self.weights) - 1
        for i, w in enumerate(self.weights):
            if cache is not None:
                cache.append(h)
            h = conv3x3(h, w)
            if i < last:
                h = np.maximum(h, 0.0)
        return grids - h[:, 0]

    def backward(self, cache: List, grad_out: np.ndarray) -> List[np.ndarray]:
        """出力勾配 (B, H, W) から各層の重み勾配を返す"""
        # output = x − net(x)、残差側の勾配は符号反転
        g = -np.asarray(grad_out)[:, None]
        grads: List[np.ndarray] = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            inp = cache[i]
            g_in, grads[i] = conv3x3_backward(inp, self.weights[i], g)
            if i > 0:
                # inp = relu(pre) なので inp > 0 の位置だけ通す
                g = g_in * (inp > 0)
        return grads

    def denoise(self, noisy: np.ndarray, sigma_level: float) -> np.ndarray:
        """単一グリッド (H, W) のノイズ除去"""
        noisy = np.asarray(noisy, dtype=np.float64)
        if noisy.ndim != 2:
            raise ShapeError(f"denoise expects a 2-D kernel grid, got shape {noisy.shape}")
        return self.forward(noisy[None], sigma_level)[0]

    def loss(self, noisy: np.ndarray, clean: np.ndarray, sigma: Union[float, np.ndarray]) -> float:
        """バッチ平均の二乗誤差和"""
        diff = self.forward(noisy, sigma) - clean
        return float(np.sum(diff ** 2) / noisy.shape[0])

    def loss_and_grads(self, noisy, clean, sigma) -> Tuple[float, List[np.ndarray]]:
        cache: List = []
        diff = self.forward(noisy, sigma, cache) - clean
        batch = noisy.shape[0]
        loss = float(np.sum(diff ** 2) / batch)
        return loss, self.backward(cache, 2.0 * diff / batch)

    def copy(self) -> "DenoiserNet":
        return DenoiserNet([w.copy() for w in self.weights], self.canvas)

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "layers": [list(w.shape) for w in self.weights],
            "parameters": int(sum(w.size for w in self.weights)),
            "canvas": self.canvas,
        }


def kernel_training_set(kernels: Sequence[BlurKernel], canvas: int) -> np.ndarray:
    """カーネルを canvas×canvas の中央に埋め込んだスタック (N, canvas, canvas)"""
    if not kernels:
        raise ValueError("Kernel dataset is empty")
    return np.stack([k.padded(canvas) for k in kernels])


def train(kernels: Sequence[BlurKernel], config: TrainConfig, net: Optional[DenoiserNet] = None,
          show_progress: Optional[bool] = None, grad_clip: float = 1.0) -> Tuple[DenoiserNet, List[float]]:
    """
    Momentum SGD on the summed squared error between denoised and clean
    kernels, σ drawn per example from config.sigma_range.

    Returns the trained network and the fixed monitor-batch loss recorded before the
    first step and after every step.
    """
    rng = np.random.default_rng(config.seed)
    clean_set = kernel_training_set(kernels, config.canvas)
    net = net.copy() if net is not None else DenoiserNet.initialize(rng, canvas=config.canvas)
    lo, hi = config.sigma_range

    monitor_idx = rng.integers(0, len(clean_set), size=config.monitor_size)
    monitor_sigma = rng.uniform(lo, hi, size=config.monitor_size)
    monitor_clean = clean_set[monitor_idx]
    monitor_noisy = monitor_clean + monitor_sigma[:, None, None] * rng.standard_normal(monitor_clean.shape)

    velocity = [np.zeros_like(w) for w in net.weights]
    history = [net.loss(monitor_noisy, monitor_clean, monitor_sigma)]
    show = Config.SHOW_PROGRESS if show_progress is None else show_progress
    logger.info("denoiser_train_start", steps=config.steps, kernels=len(clean_set), monitor_loss=history[0])

    for step in tqdm(range(1, config.steps + 1), desc="train", disable=not show, leave=False):
        idx = rng.integers(0, len(clean_set), size=config.batch_size)
        sig = rng.uniform(lo, hi, size=config.batch_size)
        clean = clean_set[idx]
        noisy = clean + sig[:, None, None] * rng.standard_normal(clean.shape)

        loss, grads = net.loss_and_grads(noisy, clean, sig)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        norm = np.sqrt(sum(float(np.sum(g ** 2)) for g in grads))
        scale = grad_clip / norm if grad_clip and norm > grad_clip else 1.0
        for w, v, g in zip(net.weights, velocity, grads):
            v *= config.momentum
            v -= config.learning_rate * scale * g
            w += v

        monitored = net.loss(monitor_noisy, monitor_clean, monitor_sigma)
        if not np.isfinite(monitored):
            raise TrainingDivergedError(step, monitored)
        history.append(monitored)

    logger.info("denoiser_train_done", steps=config.steps, monitor_loss=history[-1])
    return net, history


def encode_weights(net: DenoiserNet) -> bytes:
    parts = [_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, len(net.weights))]
    for w in net.weights:
        parts.append(_LAYER.pack(*w.shape))
        parts.append(w.astype("<f8").tobytes(order="C"))
    return b"".join(parts)


def decode_weights(payload: bytes, source: str = "<bytes>",
                   canvas: int = DiffusionConfig.DENOISER_CANVAS) -> DenoiserNet:
    if len(payload) < _HEADER.size:
        raise FormatError(f"{source}: unexpected end of weight file")
    magic, version, count = _HEADER.unpack_from(payload)
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{source}: unsupported weight file version {version} (expected {WEIGHTS_VERSION})")
    offset = _HEADER.size
    weights = []
    for i in range(count):
        if len(payload) < offset + _LAYER.size:
            raise FormatError(f"{source}: unexpected end of weight file")
        shape = _LAYER.unpack_from(payload, offset)
        offset += _LAYER.size
        nbytes = 8 * int(np.prod(shape))
        if len(payload) < offset + nbytes:
            raise FormatError(f"{source}: unexpected end of weight file")
        weights.append(np.frombuffer(payload[offset:offset + nbytes], dtype="<f8").astype(np.float64).reshape(shape))
        offset += nbytes
    try:
        return DenoiserNet(weights, canvas)
    except ShapeError as e:
        raise FormatError(f"{source}: {e}")


def save_weights(net: DenoiserNet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_weights(net))
    return path


def load_weights(path: Union[str, Path], canvas: int = DiffusionConfig.DENOISER_CANVAS) -> DenoiserNet:
    path = Path(path)
    return decode_weights(path.read_bytes(), source=str(path), canvas=canvas)
