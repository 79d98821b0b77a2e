"""
RefineNet：简化 U-Net，3 级编码 / 3 级解码
编码器每级拼接两帧对应尺度的低层特征 L^k，最深两级再拼接 stage 外观特征 A
输出残差加到融合帧上：Î_t = Ĩ_t + residual
"""

from __future__ import annotations

from typing import List

from ..backbone import LowLevelPyramid, StageOutput
from ..errors import ShapeError
from ..model import ParamScope
from ..settings import ModelConfig
from ..tensor_core import ops
from ..tensor_core.tensor import Tensor


def _encoder_inputs(cfg: ModelConfig) -> List[int]:
    c = cfg.C
    ch1, ch2 = cfg.stage_channels
    return [
        3 + 2 * c,                       # Ĩ_t, L0 ×2
        2 * c + 2 * (2 * c) + 2 * ch1,   # e0, L1 ×2, A(stage1) ×2
        4 * c + 2 * (4 * c) + 2 * ch2,   # e1, L2 ×2, A(stage2) ×2
    ]


def declare_refine(scope: ParamScope, cfg: ModelConfig) -> None:
    c = cfg.C
    widths = [2 * c, 4 * c, 8 * c]
    for k, (c_in, c_out) in enumerate(zip(_encoder_inputs(cfg), widths)):
        scope.declare_conv(f"enc{k}a", c_in, c_out, 3)
        scope.declare_conv(f"enc{k}b", c_out, c_out, 3)
    scope.declare_conv("dec2", 8 * c + 4 * c, 4 * c, 3)
    scope.declare_conv("dec1", 4 * c + 2 * c, 2 * c, 3)
    scope.declare_conv("dec0", 2 * c + 3, c, 3)
    scope.declare_conv("out", c, 3, 3)


def _up(x: Tensor, factor: int) -> Tensor:
    return ops.bilinear_resize(x, x.shape[2] * factor, x.shape[3] * factor)


def refine(fused: Tensor, pyramid0: LowLevelPyramid, pyramid1: LowLevelPyramid,
           stage1: StageOutput, stage2: StageOutput, scope: ParamScope) -> Tensor:
    if fused.shape[-2:] != pyramid0.L0.shape[-2:]:
        raise ShapeError(f"融合帧 {fused.shape} 与低层特征 {pyramid0.L0.shape} 尺寸不一致")
    act = ops.leaky_relu

    def encode(k: int, parts: List[Tensor]) -> Tensor:
        x = act(scope.conv(f"enc{k}a", ops.concat_channels(parts), stride=2))
        return act(scope.conv(f"enc{k}b", x))

    e0 = encode(0, [fused, pyramid0.L0, pyramid1.L0])
    e1 = encode(1, [e0, pyramid0.L1, pyramid1.L1, _up(stage1.appearance0, 4), _up(stage1.appearance1, 4)])
    e2 = encode(2, [e1, pyramid0.L2, pyramid1.L2, _up(stage2.appearance0, 4), _up(stage2.appearance1, 4)])

    d2 = act(scope.conv("dec2", ops.concat_channels([_up(e2, 2), e1])))
    d1 = act(scope.conv("dec1", ops.concat_channels([_up(d2, 2), e0])))
    d0 = act(scope.conv("dec0", ops.concat_channels([_up(d1, 2), fused])))
    return fused + scope.conv("out", d0)
