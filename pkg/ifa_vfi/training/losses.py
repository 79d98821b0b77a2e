"""
拉普拉斯金字塔损失
L = L_rec + λ · Σ_i L_warp^i，其中 L_rec 与 L_warp 都使用 laplacian_loss
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import ShapeError
from ..tensor_core import ops
from ..tensor_core.tensor import Tensor

DEFAULT_LEVELS = 5
LOSS_LAMBDA = 0.5

_KERNEL_1D = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_KERNEL_2D = np.outer(_KERNEL_1D, _KERNEL_1D)


def _blur(x: Tensor) -> Tensor:
    """逐通道 5x5 高斯模糊，边界反射填充"""
    c = x.shape[1]
    kernel = Tensor(np.broadcast_to(_KERNEL_2D, (c, 1, 5, 5)).astype(x.dtype))
    return ops.conv2d(ops.pad2d(x, (2, 2, 2, 2), mode="reflect"), kernel, groups=c)


def pyr_down(x: Tensor) -> Tensor:
    return _blur(x)[:, :, ::2, ::2]


def pyr_up(x: Tensor, h: int, w: int) -> Tensor:
    up = _blur(ops.zero_insert(x)) * 4.0
    return up[:, :, :h, :w]


def laplacian_pyramid(image: Tensor, levels: int = DEFAULT_LEVELS) -> List[Tensor]:
    """levels−1 个带通层 + 最后的低通层"""
    if levels < 1:
        raise ValueError(f"levels 必须 ≥ 1: {levels}")
    min_size = 2 ** (levels - 1)
    h, w = image.shape[-2:]
    if h < min_size or w < min_size:
        raise ShapeError(f"图像 {h}x{w} 太小，{levels} 层金字塔至少需要 {min_size}x{min_size}")
    pyramid: List[Tensor] = []
    current = image
    for _ in range(levels - 1):
        down = pyr_down(current)
        pyramid.append(current - pyr_up(down, *current.shape[-2:]))
        current = down
    pyramid.append(current)
    return pyramid


def collapse_pyramid(pyramid: Sequence[Tensor]) -> Tensor:
    current = pyramid[-1]
    for band in reversed(pyramid[:-1]):
        current = pyr_up(current, *band.shape[-2:]) + band
    return current


def laplacian_loss(a: Tensor, b: Tensor, levels: int = DEFAULT_LEVELS) -> Tensor:
    """Σ_l 2^l · mean|P_l(a) − P_l(b)|，最细层权重为 1"""
    if a.shape != b.shape:
        raise ShapeError(f"laplacian_loss 形状不一致: {a.shape} vs {b.shape}")
    total: Optional[Tensor] = None
    for level, (pa, pb) in enumerate(zip(laplacian_pyramid(a, levels), laplacian_pyramid(b, levels))):
        term = ops.abs(pa - pb).mean() * float(2 ** level)
        total = term if total is None else total + term
    return total


class LossReport(BaseModel):
    """一步训练的损失分解；total 由各部分按 rec + λ·Σwarp 计算"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    warp_losses: List[float]
    rec_loss: float
    total: float
    lam: float = LOSS_LAMBDA
    loss: Optional[Tensor] = Field(default=None, exclude=True)

    @staticmethod
    def combine(rec_loss: float, warp_losses: Sequence[float], lam: float) -> float:
        return rec_loss + lam * math.fsum(warp_losses)

    def recompute_total(self) -> float:
        return self.combine(self.rec_loss, self.warp_losses, self.lam)

    def is_finite(self) -> bool:
        return math.isfinite(self.total)

    def csv_row(self, step: int) -> dict:
        row = {"step": step, "total": self.total, "rec": self.rec_loss}
        for i, value in enumerate(self.warp_losses, start=1):
            row[f"warp{i}"] = value
        return row


def total_loss(warped_per_stage: Sequence[Tensor], prediction: Tensor, ground_truth: Tensor,
               lam: float = LOSS_LAMBDA) -> LossReport:
    warp_terms = [laplacian_loss(w, ground_truth) for w in warped_per_stage]
    rec_term = laplacian_loss(prediction, ground_truth)
    loss = rec_term
    if warp_terms:
        warp_sum = warp_terms[0]
        for term in warp_terms[1:]:
            warp_sum = warp_sum + term
        loss = rec_term + warp_sum * float(lam)
    warp_values = [term.item() for term in warp_terms]
    rec_value = rec_term.item()
    return LossReport(
        warp_losses=warp_values,
        rec_loss=rec_value,
        total=LossReport.combine(rec_value, warp_values, lam),
        lam=lam,
        loss=loss,
    )
