"""
由粗到细的光流/融合掩码估计头
每个 stage：按 t 缩放运动特征 → 两次 pixel_shuffle(2) 放大 4 倍 →
与下采样后的 warp 图像、上一轮光流和掩码拼接 → 三层卷积输出 5 通道残差
"""

from __future__ import annotations

import logging
from typing import List, Tuple

from ..attention import scale_motion
from ..backbone import StageOutput
from ..errors import ShapeError
from ..model import ParamScope
from ..settings import ModelConfig
from ..tensor_core import ops
from ..tensor_core.tensor import Tensor
from .warp import FlowState, warp_pair

logger = logging.getLogger(__name__)

# 估计头执行顺序：先 H/16 (stage 2) 后 H/8 (stage 1)
STAGE_ORDER = ("stage2", "stage1")
# pixel_shuffle 两次后的放大倍数
SHUFFLE_SCALE = 4
# warp 图像 (3+3) + 光流 (4) + 掩码 (1)
STATE_CHANNELS = 11
RESIDUAL_CHANNELS = 5


def head_channels(stage_channels: int) -> Tuple[int, int, int]:
    """(输入, 隐层 1, 隐层 2) 通道数：in → 2in/3 → in/3 → 5"""
    c_in = stage_channels // 4 + STATE_CHANNELS
    return c_in, max(1, 2 * c_in // 3), max(1, c_in // 3)


def working_factor(stage_name: str) -> int:
    """stage 的工作分辨率相对输入的缩小倍数（H/8·4 = H/2，H/16·4 = H/4）"""
    return {"stage1": 8, "stage2": 16}[stage_name] // SHUFFLE_SCALE


def declare_flow_heads(scope: ParamScope, cfg: ModelConfig) -> None:
    ch1, ch2 = cfg.stage_channels
    for name, channels in zip(STAGE_ORDER, (ch2, ch1)):
        c_in, c_mid1, c_mid2 = head_channels(channels)
        head = scope.child(name)
        head.declare_conv("conv1", c_in, c_mid1, 3)
        head.declare_conv("conv2", c_mid1, c_mid2, 3)
        head.declare_conv("conv3", c_mid2, RESIDUAL_CHANNELS, 3)


def stage_input_features(stage: StageOutput, t: float) -> Tensor:
    """[t·MF_{0→1}, A_0, (1−t)·MF_{1→0}, A_1] 经两次 pixel_shuffle 放大到 4 倍"""
    feat0 = ops.concat_channels([scale_motion(stage.motion_feat01, t), stage.appearance0])
    feat1 = ops.concat_channels([scale_motion(stage.motion_feat10, 1.0 - t), stage.appearance1])
    x = ops.concat_channels([feat0, feat1])
    return ops.pixel_shuffle(ops.pixel_shuffle(x, 2), 2)


def motion_stage_residual(stage: StageOutput, t: float, prev: FlowState, image0: Tensor, image1: Tensor,
                          scope: ParamScope, factor: int) -> Tensor:
    """返回上采样到全分辨率、光流通道已乘以 factor 的 5 通道残差"""
    n, _, h, w = image0.shape
    if h % factor or w % factor:
        raise ShapeError(f"输入尺寸 {h}x{w} 不能被工作倍率 {factor} 整除")
    hs, ws = h // factor, w // factor
    feats = stage_input_features(stage, t)
    if feats.shape[-2:] != (hs, ws):
        raise ShapeError(f"stage 特征放大后为 {feats.shape[-2:]}，期望 {(hs, ws)}")

    small0 = ops.bilinear_resize(image0, hs, ws)
    small1 = ops.bilinear_resize(image1, hs, ws)
    flow_small = ops.bilinear_resize(prev.flow, hs, ws) * (1.0 / factor)
    mask_small = ops.bilinear_resize(prev.mask_logits, hs, ws)
    warped0, warped1 = warp_pair(small0, small1, flow_small)

    x = ops.concat_channels([feats, warped0, warped1, flow_small, mask_small])
    x = ops.leaky_relu(scope.conv("conv1", x))
    x = ops.leaky_relu(scope.conv("conv2", x))
    res = scope.conv("conv3", x)

    res = ops.bilinear_resize(res, h, w)
    return ops.concat_channels([res[:, 0:4] * float(factor), res[:, 4:5]])


def estimate_motion_stage(stage: StageOutput, t: float, prev: FlowState, image0: Tensor, image1: Tensor,
                          scope: ParamScope, factor: int) -> FlowState:
    """新状态 = 上一状态 + 本 stage 残差"""
    return prev.updated(motion_stage_residual(stage, t, prev, image0, image1, scope, factor))


def run_flow_heads(stages: List[Tuple[str, StageOutput]], t: float, image0: Tensor, image1: Tensor,
                   scope: ParamScope) -> List[FlowState]:
    """从零状态开始依次执行各 stage，返回每个 stage 之后的状态"""
    n, _, h, w = image0.shape
    state = FlowState.zeros(n, h, w)
    history: List[FlowState] = []
    for name, stage in stages:
        state = estimate_motion_stage(stage, t, state, image0, image1, scope.child(name), working_factor(name))
        history.append(state)
    return history
