"""
图像质量指标：PSNR / SSIM / IE
输入为 [0,1] 浮点图像（numpy 数组或 Tensor），统一转为 float64 后交给 scikit-image
"""

from __future__ import annotations

import math
from typing import Union

import numpy as np
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from ..errors import ShapeError
from ..tensor_core.tensor import Tensor

ArrayLike = Union[np.ndarray, Tensor]

# 完全相同的图像返回的 PSNR
PSNR_IDENTICAL = math.inf

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(x: ArrayLike) -> np.ndarray:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return data.astype(np.float64)


def _pair(a: ArrayLike, b: ArrayLike):
    a64, b64 = _as_array(a), _as_array(b)
    if a64.shape != b64.shape:
        raise ShapeError(f"两幅图像形状不一致: {a64.shape} vs {b64.shape}")
    return a64, b64


def psnr(a: ArrayLike, b: ArrayLike, peak: float = 1.0) -> float:
    a64, b64 = _pair(a, b)
    if np.array_equal(a64, b64):
        return PSNR_IDENTICAL
    return float(peak_signal_noise_ratio(b64, a64, data_range=peak))


def interpolation_error(a: ArrayLike, b: ArrayLike) -> float:
    """0–255 尺度下所有通道的均方根误差"""
    a64, b64 = _pair(a, b)
    return float(np.sqrt(np.mean((255.0 * (a64 - b64)) ** 2)))


def _to_gray(x: np.ndarray) -> np.ndarray:
    """(n,c,h,w) / (c,h,w) / (h,w) → 按通道取平均后的 (n,h,w)"""
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return x.mean(axis=0)[None]
    if x.ndim == 4:
        return x.mean(axis=1)
    raise ShapeError(f"SSIM 不支持的图像维度: {x.shape}")


def ssim_window_size(h: int, w: int) -> int:
    """11，或不超过短边的最大奇数"""
    side = min(h, w, SSIM_WINDOW)
    return side if side % 2 == 1 else side - 1


def ssim_sigma(size: int) -> float:
    """窗口缩小时 σ 按比例缩小，使高斯核半径恰好等于窗口半径（skimage 固定 truncate=3.5）"""
    return SSIM_SIGMA * size / SSIM_WINDOW


def ssim(a: ArrayLike, b: ArrayLike, data_range: float = 1.0) -> float:
    """灰度 SSIM：高斯加权窗口，只在完整窗口（valid）位置上取平均；批内逐张计算后平均"""
    a64, b64 = _pair(a, b)
    ga, gb = _to_gray(a64), _to_gray(b64)
    h, w = ga.shape[-2:]
    size = ssim_window_size(h, w)
    if size < 1:
        raise ShapeError(f"图像太小，无法计算 SSIM: {ga.shape}")
    scores = [
        structural_similarity(
            x, y,
            win_size=size,
            gaussian_weights=True,
            sigma=ssim_sigma(size),
            use_sample_covariance=False,
            data_range=data_range,
            K1=SSIM_K1,
            K2=SSIM_K2,
        )
        for x, y in zip(ga, gb)
    ]
    return float(np.mean(scores))
