"""
光流可视化与 FLO1 原始光流文件
色轮：色相 = 方向，饱和度 = 幅值 / 第 99 百分位幅值，明度恒为 1（零光流为白色）
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from ..tensor_core import ops
from ..tensor_core.tensor import Tensor

FLO_MAGIC = b"FLO1"


def _as_field(flow: Union[Tensor, np.ndarray]) -> np.ndarray:
    """(1,2,H,W) / (2,H,W) → (2,H,W) float32"""
    data = flow.data if isinstance(flow, Tensor) else np.asarray(flow)
    if data.ndim == 4:
        data = data[0]
    if data.ndim != 3 or data.shape[0] != 2:
        raise ValueError(f"光流需要 2 个通道，收到 {data.shape}")
    return data.astype(np.float32)


def flow_to_color(flow: Union[Tensor, np.ndarray]) -> np.ndarray:
    """返回 (H, W, 3) uint8 RGB"""
    fx, fy = _as_field(flow).astype(np.float64)
    magnitude = np.hypot(fx, fy)
    scale = float(np.percentile(magnitude, 99))
    if scale <= 0.0:
        scale = 1.0
    angle = np.arctan2(fy, fx)
    hue = np.mod(angle, 2.0 * np.pi) / (2.0 * np.pi)
    saturation = np.clip(magnitude / scale, 0.0, 1.0)
    hsv = np.stack([
        np.floor(hue * 255.0 + 0.5) % 256,
        np.floor(saturation * 255.0 + 0.5),
        np.full_like(hue, 255.0),
    ], axis=-1).astype(np.uint8)
    bands = [Image.fromarray(np.ascontiguousarray(hsv[..., i])) for i in range(3)]
    return np.asarray(Image.merge("HSV", bands).convert("RGB"))


def write_flo(path: Union[str, Path], flow: Union[Tensor, np.ndarray]) -> Path:
    """FLO1 | u32 宽 | u32 高 | 逐像素 (x, y) f32 对，小端"""
    field = _as_field(flow)
    _, h, w = field.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(field.transpose(1, 2, 0), dtype="<f4").tobytes()
    path.write_bytes(FLO_MAGIC + struct.pack("<2I", w, h) + payload)
    return path


def read_flo(path: Union[str, Path]) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != FLO_MAGIC:
        raise ValueError(f"不是 FLO1 文件: {path}")
    w, h = struct.unpack("<2I", buf[4:12])
    expected = 12 + 8 * w * h
    if len(buf) != expected:
        raise ValueError(f"FLO1 文件长度 {len(buf)} 与尺寸 {w}x{h} 不符（应为 {expected}）")
    pairs = np.frombuffer(buf[12:], dtype="<f4").reshape(h, w, 2)
    return np.ascontiguousarray(pairs.transpose(2, 0, 1)).astype(np.float32)


def motion_to_pixels(motion: Tensor, full_h: int, full_w: int) -> Tensor:
    """归一化坐标下的运动场 → 全分辨率像素位移（先按像素间隔换算，再双线性放大并乘以倍率）"""
    _, _, h, w = motion.shape
    sx = (w - 1) / 2.0 if w > 1 else 0.0
    sy = (h - 1) / 2.0 if h > 1 else 0.0
    pixels = ops.concat_channels([motion[:, 0:1] * sx * (full_w / w), motion[:, 1:2] * sy * (full_h / h)])
    return ops.bilinear_resize(pixels, full_h, full_w)
