"""
运动-外观特征提取主干
1. 低层卷积金字塔 L^0/L^1/L^2（逐帧）
2. 跨尺度空洞卷积嵌入，统一到 H/8
3. 两个 stage 的帧间注意力 Transformer（H/8 与 H/16）
"""

from __future__ import annotations

import logging
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict

from .attention import block_configs, declare_block, run_stage
from .errors import ShapeError
from .model import ParamScope
from .settings import ModelConfig
from .tensor_core import ops
from .tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)

# 输入尺寸必须是它的整数倍（主干最深处为 H/16）
SIZE_MULTIPLE = 16

# 每个金字塔层级的 (stride, 空洞率集合)
EMBED_BRANCHES: Tuple[Tuple[int, Tuple[int, ...]], ...] = (
    (8, (1, 2, 4)),
    (4, (1, 2)),
    (2, (1,)),
)


class LowLevelPyramid(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    L0: Tensor
    L1: Tensor
    L2: Tensor

    def levels(self) -> List[Tensor]:
        return [self.L0, self.L1, self.L2]


class StageOutput(BaseModel):
    """一个 Transformer stage 的输出（两帧、两个方向）"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    appearance0: Tensor
    appearance1: Tensor
    motion_feat01: Tensor
    motion_feat10: Tensor
    motion01: Tensor
    motion10: Tensor


class StageFeatures(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    stage1: StageOutput
    stage2: StageOutput

    def stages(self) -> List[StageOutput]:
        return [self.stage1, self.stage2]


def check_input_size(h: int, w: int) -> None:
    if h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
        raise ShapeError(f"输入尺寸 {h}x{w} 不是 {SIZE_MULTIPLE} 的倍数，请先用复制填充补齐")


def declare_backbone(scope: ParamScope, cfg: ModelConfig) -> None:
    c = cfg.C
    low = scope.child("low")
    low.declare_conv("conv0a", 3, c, 3)
    low.declare_conv("conv0b", c, c, 3)
    low.declare_conv("conv1a", c, 2 * c, 3)
    low.declare_conv("conv1b", 2 * c, 2 * c, 3)
    low.declare_conv("conv2a", 2 * c, 4 * c, 3)
    low.declare_conv("conv2b", 4 * c, 4 * c, 3)

    embed = scope.child("embed")
    branch_width = 2 * c
    n_branches = 0
    for level, (_, dilations) in enumerate(EMBED_BRANCHES):
        for d in dilations:
            embed.declare_conv(f"l{level}_d{d}", (2 ** level) * c, branch_width, 3)
            n_branches += 1
    embed.declare_linear("fuse", n_branches * branch_width, 8 * c)

    ch1, ch2 = cfg.stage_channels
    stage1 = scope.child("stage1")
    for i in range(cfg.N1):
        declare_block(stage1.child(f"block{i}"), ch1, cfg.mlp_ratio)
    scope.declare_conv("downsample", ch1, ch2, 3)
    stage2 = scope.child("stage2")
    for i in range(cfg.N2):
        declare_block(stage2.child(f"block{i}"), ch2, cfg.mlp_ratio)


def low_level_extract(image: Tensor, scope: ParamScope) -> LowLevelPyramid:
    """单帧卷积金字塔：k=0 两个 stride-1 卷积；之后每级 stride-2 + stride-1，通道翻倍"""
    if image.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"需要 (n, 3, H, W) 的 RGB 图像，收到 {image.shape}")
    check_input_size(*image.shape[-2:])
    low = scope.child("low")
    act = ops.leaky_relu
    l0 = act(low.conv("conv0b", act(low.conv("conv0a", image))))
    l1 = act(low.conv("conv1b", act(low.conv("conv1a", l0, stride=2))))
    l2 = act(low.conv("conv2b", act(low.conv("conv2a", l1, stride=2))))
    return LowLevelPyramid(L0=l0, L1=l1, L2=l2)


def cross_scale_embed(pyr: LowLevelPyramid, scope: ParamScope) -> Tensor:
    """六个空洞卷积分支对齐到 H/8 后拼接，再线性融合为 8C 通道"""
    embed = scope.child("embed")
    branches: List[Tensor] = []
    for level, (feature, (stride, dilations)) in enumerate(zip(pyr.levels(), EMBED_BRANCHES)):
        for d in dilations:
            branches.append(ops.leaky_relu(embed.conv(f"l{level}_d{d}", feature, stride=stride, dilation=d)))
    return embed.linear("fuse", ops.concat_channels(branches))


def motion_appearance_extract(c0: Tensor, c1: Tensor, cfg: ModelConfig, scope: ParamScope) -> StageFeatures:
    """stage 1 (H/8) → stride-2 下采样 → stage 2 (H/16)"""
    if c0.shape != c1.shape:
        raise ShapeError(f"两帧嵌入特征形状不一致: {c0.shape} vs {c1.shape}")
    ch1, ch2 = cfg.stage_channels
    if c0.shape[1] != ch1:
        raise ShapeError(f"stage 1 需要 {ch1} 通道，收到 {c0.shape}")

    a0, a1, mf01, mf10, m01, m10 = run_stage(c0, c1, block_configs(ch1, cfg.N1, cfg.window_size),
                                             scope.child("stage1"))
    stage1 = StageOutput(appearance0=a0, appearance1=a1, motion_feat01=mf01,
                         motion_feat10=mf10, motion01=m01, motion10=m10)

    d0 = scope.conv("downsample", a0, stride=2)
    d1 = scope.conv("downsample", a1, stride=2)
    a0, a1, mf01, mf10, m01, m10 = run_stage(d0, d1, block_configs(ch2, cfg.N2, cfg.window_size),
                                             scope.child("stage2"))
    stage2 = StageOutput(appearance0=a0, appearance1=a1, motion_feat01=mf01,
                         motion_feat10=mf10, motion01=m01, motion10=m10)
    return StageFeatures(stage1=stage1, stage2=stage2)
