"""
RTF1 tensor files and 8-bit PNG images
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np
import structlog
from PIL import Image

from models.kernel import BlurKernel
from .errors import FormatError

logger = structlog.get_logger(__name__)

RTF_MAGIC = b"RTF1"
RTF_HEADER = struct.Struct("<4sIII")
PNG_SUFFIXES = {".png"}
RTF_SUFFIXES = {".rtf", ".rtf1"}

PathLike = Union[str, Path]


def encode_rtf(tensor: np.ndarray) -> bytes:
    """(H, W, C) / (H, W) 配列を RTF1 バイト列に変換"""
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"RTF1 stores 3-D tensors, got shape {arr.shape}")
    h, w, c = arr.shape
    return RTF_HEADER.pack(RTF_MAGIC, h, w, c) + arr.astype("<f8").tobytes(order="C")


def decode_rtf(payload: bytes, source: str = "<bytes>") -> np.ndarray:
    """RTF1 バイト列を (H, W, C) 配列に復元"""
    if len(payload) < RTF_HEADER.size:
        raise FormatError(f"{source}: unexpected end of RTF1 header")
    magic, h, w, c = RTF_HEADER.unpack_from(payload)
    if magic != RTF_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {RTF_MAGIC!r}")
    count = h * w * c
    body = payload[RTF_HEADER.size:]
    if len(body) < 8 * count:
        raise FormatError(f"{source}: unexpected end of RTF1 data ({len(body)} < {8 * count} bytes)")
    data = np.frombuffer(body[:8 * count], dtype="<f8").astype(np.float64)
    return data.reshape(h, w, c)


def write_rtf(path: PathLike, tensor: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_rtf(tensor))
    return path


def read_rtf(path: PathLike) -> np.ndarray:
    path = Path(path)
    return decode_rtf(path.read_bytes(), source=str(path))


def write_kernel(path: PathLike, kernel: BlurKernel) -> Path:
    return write_rtf(path, kernel.data[:, :, None])


def read_kernel(path: PathLike) -> BlurKernel:
    """RTF1 (C=1) からカーネルを読み込み、単体制約を検証"""
    arr = read_rtf(path)
    if arr.shape[2] != 1:
        raise FormatError(f"{path}: kernel file must have C=1, got C={arr.shape[2]}")
    try:
        return BlurKernel(arr[:, :, 0])
    except ValueError as e:
        raise FormatError(f"{path}: invalid kernel: {e}")


def read_png(path: PathLike) -> np.ndarray:
    """8bit PNG を [0, 1] の (H, W, C) float に変換"""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def write_png(path: PathLike, image: np.ndarray) -> Path:
    """[0, 1] 画像を 8bit PNG として保存（範囲外はクリップ）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    quantized = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized).save(path, format="PNG")
    return path


def read_image(path: PathLike) -> np.ndarray:
    """拡張子で RTF1 / PNG を判別して読み込む"""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in PNG_SUFFIXES:
        return read_png(path)
    if suffix in RTF_SUFFIXES:
        return read_rtf(path)
    raise FormatError(f"Unsupported image format: {path}")


def write_image(path: PathLike, image: np.ndarray) -> Path:
    path = Path(path)
    if path.suffix.lower() in PNG_SUFFIXES:
        return write_png(path, image)
    return write_rtf(path, image)


def is_image_file(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in (PNG_SUFFIXES | RTF_SUFFIXES)
