"""
PNG 读写：8-bit sRGB <-> [0,1] float32 张量 (1, 3, H, W)
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from ..tensor_core.tensor import Tensor

PathLike = Union[str, Path]


def load_image(path: PathLike) -> Tensor:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return Tensor(np.ascontiguousarray(arr.transpose(2, 0, 1)[None]))


def quantize(image: Union[Tensor, np.ndarray]) -> np.ndarray:
    """(1,3,H,W) 或 (3,H,W) → (H,W,3) uint8；先截断到 [0,1]，再 floor(x·255 + 0.5)"""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim == 4:
        data = data[0]
    data = np.nan_to_num(data.astype(np.float64), nan=0.0)
    data = np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5)
    return data.transpose(1, 2, 0).astype(np.uint8)


def dequantize(pixels: np.ndarray) -> Tensor:
    return Tensor(np.ascontiguousarray((pixels.astype(np.float32) / 255.0).transpose(2, 0, 1)[None]))


def save_image(path: PathLike, image: Union[Tensor, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(image)).save(path, format="PNG")
    return path


def save_rgb(path: PathLike, pixels: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path, format="PNG")
    return path
