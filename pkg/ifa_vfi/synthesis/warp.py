"""
后向 warp 与掩码融合
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..errors import ShapeError
from ..tensor_core import ops
from ..tensor_core.tensor import Tensor


class FlowState(BaseModel):
    """
    flow: (n, 4, H, W) = (F_{t→0}.x, F_{t→0}.y, F_{t→1}.x, F_{t→1}.y)，像素单位
    mask_logits: (n, 1, H, W)，融合掩码 O = sigmoid(mask_logits)
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    flow: Tensor
    mask_logits: Tensor

    @classmethod
    def zeros(cls, n: int, h: int, w: int) -> "FlowState":
        return cls(flow=Tensor(np.zeros((n, 4, h, w), dtype=np.float32)),
                   mask_logits=Tensor(np.zeros((n, 1, h, w), dtype=np.float32)))

    @property
    def flow_t0(self) -> Tensor:
        return self.flow[:, 0:2]

    @property
    def flow_t1(self) -> Tensor:
        return self.flow[:, 2:4]

    @property
    def mask(self) -> Tensor:
        return ops.sigmoid(self.mask_logits)

    def updated(self, residual: Tensor) -> "FlowState":
        """加上 5 通道残差 (ΔF, ΔO)"""
        return FlowState(flow=self.flow + residual[:, 0:4], mask_logits=self.mask_logits + residual[:, 4:5])

    def crop(self, h: int, w: int) -> "FlowState":
        return FlowState(flow=self.flow[:, :, :h, :w], mask_logits=self.mask_logits[:, :, :h, :w])


class WarpResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    warped0: Tensor
    warped1: Tensor
    fused: Tensor


def backward_warp(image: Tensor, flow: Tensor) -> Tensor:
    """output(p) = image(p + flow(p))，双线性采样，越界补零"""
    if image.ndim != 4 or flow.ndim != 4 or image.shape[-2:] != flow.shape[-2:] or flow.shape[1] != 2:
        raise ShapeError(f"backward_warp 尺寸不匹配: image {image.shape} vs flow {flow.shape}")
    return ops.sample_bilinear(image, flow)


def blend(mask: Tensor, warped0: Tensor, warped1: Tensor) -> Tensor:
    """O ⊙ w0 + (1 − O) ⊙ w1"""
    return mask * warped0 + (1.0 - mask) * warped1


def fuse_warped(image0: Tensor, image1: Tensor, state: FlowState) -> WarpResult:
    warped0 = backward_warp(image0, state.flow_t0)
    warped1 = backward_warp(image1, state.flow_t1)
    return WarpResult(warped0=warped0, warped1=warped1, fused=blend(state.mask, warped0, warped1))


def warp_pair(image0: Tensor, image1: Tensor, flow: Tensor) -> Tuple[Tensor, Tensor]:
    return backward_warp(image0, flow[:, 0:2]), backward_warp(image1, flow[:, 2:4])
