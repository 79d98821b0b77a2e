"""
窗口化帧间注意力
一次注意力计算同时得到：
- 外观增强：Â_0 = A_0 + proj(S_{0→1} · V_1)
- 运动向量：M_{0→1} = Σ_k S(q, k) · (B_k − B_q)，按头取平均
注意力图每个方向只算一次，两个分支共用
"""

from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ShapeError
from .model import ParamScope
from .settings import HEAD_DIM
from .tensor_core import ops
from .tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)

# softmax 前加在被屏蔽 key 上的值，float64 下 exp 后为精确 0
MASK_VALUE = -1e9


class AttentionConfig(BaseModel):
    """单个注意力层的配置"""
    window_size: int = Field(7, ge=3)
    channels: int = Field(..., ge=1)
    num_heads: int = Field(1, ge=1)
    shifted: bool = False

    @model_validator(mode="after")
    def _check(self) -> "AttentionConfig":
        if self.window_size % 2 == 0:
            raise ValueError(f"window_size 必须为奇数: {self.window_size}")
        if self.channels % self.num_heads:
            raise ValueError(f"通道数 {self.channels} 不能被头数 {self.num_heads} 整除")
        return self

    @property
    def head_dim(self) -> int:
        return self.channels // self.num_heads

    @property
    def shift(self) -> int:
        return self.window_size // 2 if self.shifted else 0

    @classmethod
    def for_stage(cls, channels: int, window_size: int, shifted: bool = False) -> "AttentionConfig":
        heads = channels // HEAD_DIM if channels % HEAD_DIM == 0 and channels >= HEAD_DIM else 1
        return cls(window_size=window_size, channels=channels, num_heads=heads, shifted=shifted)


class CoordinateMap(BaseModel):
    """归一化坐标网格：通道 0 为 x，通道 1 为 y；左上 (−1,−1)，右下 (1,1)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: Tensor

    @property
    def step(self) -> Tuple[float, float]:
        """相邻像素的坐标间隔 (δx, δy)，单像素方向为 0"""
        h, w = self.values.shape[-2:]
        return (2.0 / (w - 1) if w > 1 else 0.0, 2.0 / (h - 1) if h > 1 else 0.0)


class WindowLayout(BaseModel):
    """窗口划分的几何信息与 key 有效性掩码"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    height: int
    width: int
    padded_height: int
    padded_width: int
    window_size: int
    shift: int
    valid: np.ndarray          # (nW, T, T) bool，True 表示 query 可以看到该 key
    query_valid: np.ndarray    # (nW, T) bool，query 是否落在原图内

    @property
    def num_windows(self) -> int:
        return (self.padded_height // self.window_size) * (self.padded_width // self.window_size)

    @property
    def additive_mask(self) -> np.ndarray:
        return np.where(self.valid, 0.0, MASK_VALUE)


class AttentionMap(BaseModel):
    """softmax 后的注意力权重 (n, heads, nW, T, T)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: Tensor
    layout: WindowLayout


class AttentionOutputs(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    appearance0: Tensor
    appearance1: Tensor
    motion01: Tensor
    motion10: Tensor


class BlockOutputs(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    appearance0: Tensor
    appearance1: Tensor
    motion_feat01: Tensor
    motion_feat10: Tensor
    motion01: Tensor
    motion10: Tensor


def build_coordinate_map(h: int, w: int) -> CoordinateMap:
    if h < 1 or w < 1:
        raise ShapeError(f"坐标图尺寸必须 ≥ 1: {(h, w)}")
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    grid = np.stack([np.broadcast_to(xs[None, :], (h, w)), np.broadcast_to(ys[:, None], (h, w))])
    return CoordinateMap(values=Tensor(grid[None].astype(np.float32)))


def effective_shift(h: int, w: int, window_size: int, shifted: bool) -> int:
    """整张图放得进一个窗口时不做移位"""
    if not shifted or (h <= window_size and w <= window_size):
        return 0
    return window_size // 2


def _window_ids(n_pad: int, window_size: int, shift: int) -> np.ndarray:
    """移位后每一行（列）所属的区域编号"""
    labels = np.zeros(n_pad, dtype=np.int64)
    if shift:
        labels[n_pad - window_size:n_pad - shift] = 1
        labels[n_pad - shift:] = 2
    return labels


def _partition_array(arr: np.ndarray, window_size: int) -> np.ndarray:
    """(hp, wp) -> (nW, T)"""
    hp, wp = arr.shape
    n = window_size
    return arr.reshape(hp // n, n, wp // n, n).transpose(0, 2, 1, 3).reshape(-1, n * n)


def make_layout(h: int, w: int, window_size: int, shift: int) -> WindowLayout:
    n = window_size
    hp = -(-h // n) * n
    wp = -(-w // n) * n
    in_frame = np.zeros((hp, wp), dtype=bool)
    in_frame[:h, :w] = True
    in_frame = np.roll(in_frame, (-shift, -shift), axis=(0, 1))
    region = _window_ids(hp, n, shift)[:, None] * 3 + _window_ids(wp, n, shift)[None, :]
    win_valid = _partition_array(in_frame, n)
    win_region = _partition_array(region, n)
    valid = win_valid[:, None, :] & (win_region[:, :, None] == win_region[:, None, :])
    return WindowLayout(height=h, width=w, padded_height=hp, padded_width=wp,
                        window_size=n, shift=shift, valid=valid, query_valid=win_valid)


def window_partition(feature: Tensor, window_size: int, shift: int = 0) -> Tuple[Tensor, WindowLayout]:
    """
    (n, c, h, w) -> (n, nW, T, c)
    右/下方向复制填充到窗口整数倍，再循环移位 −shift
    """
    if feature.ndim != 4:
        raise ShapeError(f"window_partition 需要 4 维特征，收到 {feature.shape}")
    n_b, c, h, w = feature.shape
    if shift not in (0, window_size // 2):
        raise ValueError(f"shift 只能是 0 或 {window_size // 2}: {shift}")
    layout = make_layout(h, w, window_size, shift)
    hp, wp, n = layout.padded_height, layout.padded_width, window_size
    x = ops.pad2d(feature, (0, hp - h, 0, wp - w), mode="edge")
    if shift:
        x = ops.roll2d(x, -shift, -shift)
    x = x.reshape(n_b, c, hp // n, n, wp // n, n).permute(0, 2, 4, 3, 5, 1)
    return x.reshape(n_b, layout.num_windows, n * n, c), layout


def window_reverse(windows: Tensor, layout: WindowLayout) -> Tensor:
    """window_partition 的逆：(n, nW, T, c) -> (n, c, h, w)，丢弃填充位置"""
    n_b, _, _, c = windows.shape
    n = layout.window_size
    hp, wp = layout.padded_height, layout.padded_width
    x = windows.reshape(n_b, hp // n, wp // n, n, n, c).permute(0, 5, 1, 3, 2, 4).reshape(n_b, c, hp, wp)
    if layout.shift:
        x = ops.roll2d(x, layout.shift, layout.shift)
    if (hp, wp) != (layout.height, layout.width):
        x = x[:, :, :layout.height, :layout.width]
    return x


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(n, nW, T, C) -> (n, heads, nW, T, d)"""
    n_b, nw, t, c = x.shape
    return x.reshape(n_b, nw, t, heads, c // heads).permute(0, 3, 1, 2, 4)


def _merge_heads(x: Tensor) -> Tensor:
    n_b, heads, nw, t, d = x.shape
    return x.permute(0, 2, 3, 1, 4).reshape(n_b, nw, t, heads * d)


def _coordinate_offsets(h: int, w: int, layout: WindowLayout) -> np.ndarray:
    """窗口内 B_k − B_q，形状 (nW, T, T, 2)"""
    coords, _ = window_partition(build_coordinate_map(h, w).values, layout.window_size, layout.shift)
    b = coords.data[0].astype(np.float64)       # (nW, T, 2)
    return b[:, None, :, :] - b[:, :, None, :]


def compute_attention_map(query_feat: Tensor, key_feat: Tensor, cfg: AttentionConfig,
                          scope: ParamScope) -> Tuple[AttentionMap, Tensor]:
    """
    query 来自一帧、key/value 来自另一帧的窗口注意力
    返回注意力图与窗口化的 value (n, heads, nW, T, d)
    """
    h, w = query_feat.shape[-2:]
    shift = effective_shift(h, w, cfg.window_size, cfg.shifted)
    q = scope.linear("q", query_feat)
    k = scope.linear("k", key_feat)
    v = scope.linear("v", key_feat)
    q_win, layout = window_partition(q, cfg.window_size, shift)
    k_win, _ = window_partition(k, cfg.window_size, shift)
    v_win, _ = window_partition(v, cfg.window_size, shift)
    qh = _split_heads(q_win, cfg.num_heads)
    kh = _split_heads(k_win, cfg.num_heads)
    vh = _split_heads(v_win, cfg.num_heads)
    logits = (qh @ kh.permute(0, 1, 2, 4, 3)) * (1.0 / np.sqrt(cfg.head_dim))
    weights = ops.softmax_lastdim(logits, mask=layout.additive_mask)
    if not layout.query_valid.all():
        # 填充位置的 query 可能整行都被屏蔽，直接置零（输出随后被裁掉）
        weights = weights * layout.query_valid[..., None].astype(weights.dtype)
    return AttentionMap(weights=weights, layout=layout), vh


def _directional(query_feat: Tensor, key_feat: Tensor, cfg: AttentionConfig,
                 scope: ParamScope) -> Tuple[Tensor, Tensor]:
    """单方向：返回外观增量 proj(S·V) 与运动场 (n, 2, h, w)"""
    h, w = query_feat.shape[-2:]
    amap, vh = compute_attention_map(query_feat, key_feat, cfg, scope)
    s = amap.weights
    layout = amap.layout

    aggregated = window_reverse(_merge_heads(s @ vh), layout)
    delta = scope.linear("proj", aggregated)

    offsets = _coordinate_offsets(h, w, layout).astype(s.dtype)
    components = [(s * offsets[..., axis]).sum(axis=-1).mean(axis=1) for axis in (0, 1)]
    n_b, nw, t = components[0].shape
    motion_win = ops.concat([c.reshape(n_b, nw, t, 1) for c in components], axis=3)
    return delta, window_reverse(motion_win, layout)


def attention_deltas(a0: Tensor, a1: Tensor, cfg: AttentionConfig,
                     scope: ParamScope) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    """两个方向的外观增量与运动场 (Δ_0, Δ_1, M_{0→1}, M_{1→0})"""
    if a0.shape != a1.shape:
        raise ShapeError(f"两帧特征形状不一致: {a0.shape} vs {a1.shape}")
    if a0.ndim != 4 or a0.shape[1] != cfg.channels:
        raise ShapeError(f"特征通道与注意力配置不符: {a0.shape}, channels={cfg.channels}")
    delta0, motion01 = _directional(a0, a1, cfg, scope)
    delta1, motion10 = _directional(a1, a0, cfg, scope)
    return delta0, delta1, motion01, motion10


def inter_frame_attention(a0: Tensor, a1: Tensor, cfg: AttentionConfig, scope: ParamScope) -> AttentionOutputs:
    delta0, delta1, motion01, motion10 = attention_deltas(a0, a1, cfg, scope)
    return AttentionOutputs(appearance0=a0 + delta0, appearance1=a1 + delta1,
                            motion01=motion01, motion10=motion10)


def scale_motion(motion: Tensor, t: float) -> Tensor:
    """把 0→1 的运动近似为 0→t：逐元素乘以 t"""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t 必须在 [0, 1] 内: {t}")
    return motion * float(t)


def _mlp(x: Tensor, scope: ParamScope) -> Tensor:
    hidden = scope.linear("fc1", x)
    hidden = scope.conv("dwconv", hidden, padding=1, groups=hidden.shape[1])
    hidden = ops.gelu(hidden)
    return scope.linear("fc2", hidden)


def transformer_block(a0: Tensor, a1: Tensor, cfg: AttentionConfig, scope: ParamScope) -> BlockOutputs:
    """pre-norm 残差块：x + IFA(LN x)，再 x + MLP(LN x)；运动向量经线性层得到运动特征"""
    attn_scope = scope.child("attn")
    n0 = scope.norm("norm1", a0)
    n1 = scope.norm("norm1", a1)
    delta0, delta1, motion01, motion10 = attention_deltas(n0, n1, cfg, attn_scope)
    x0 = a0 + delta0
    x1 = a1 + delta1

    mlp_scope = scope.child("mlp")
    x0 = x0 + _mlp(scope.norm("norm2", x0), mlp_scope)
    x1 = x1 + _mlp(scope.norm("norm2", x1), mlp_scope)

    return BlockOutputs(
        appearance0=x0,
        appearance1=x1,
        motion_feat01=scope.linear("motion", motion01),
        motion_feat10=scope.linear("motion", motion10),
        motion01=motion01,
        motion10=motion10,
    )


def declare_block(scope: ParamScope, channels: int, mlp_ratio: int = 4) -> None:
    hidden = channels * mlp_ratio
    scope.declare_norm("norm1", channels)
    attn = scope.child("attn")
    for name in ("q", "k", "v", "proj"):
        attn.declare_linear(name, channels, channels)
    scope.declare_norm("norm2", channels)
    mlp = scope.child("mlp")
    mlp.declare_linear("fc1", channels, hidden)
    mlp.declare_conv("dwconv", hidden, hidden, 3, groups=hidden)
    mlp.declare_linear("fc2", hidden, channels)
    scope.declare_linear("motion", 2, channels)


def block_configs(channels: int, num_blocks: int, window_size: int) -> List[AttentionConfig]:
    """相邻块交替 shift 0 / N//2"""
    return [AttentionConfig.for_stage(channels, window_size, shifted=bool(i % 2)) for i in range(num_blocks)]


def run_stage(a0: Tensor, a1: Tensor, configs: List[AttentionConfig], scope: ParamScope,
              ) -> Tuple[Tensor, Tensor, Tensor, Tensor, Tensor, Tensor]:
    """
    依次执行一个 stage 的全部 Transformer 块
    返回 (A_0, A_1, 运动特征 0→1, 运动特征 1→0, M_{0→1}, M_{1→0})，运动量取各块平均
    """
    feats01: List[Tensor] = []
    feats10: List[Tensor] = []
    fields01: List[Tensor] = []
    fields10: List[Tensor] = []
    for i, cfg in enumerate(configs):
        out = transformer_block(a0, a1, cfg, scope.child(f"block{i}"))
        a0, a1 = out.appearance0, out.appearance1
        feats01.append(out.motion_feat01)
        feats10.append(out.motion_feat10)
        fields01.append(out.motion01)
        fields10.append(out.motion10)
    return (a0, a1, _average(feats01), _average(feats10), _average(fields01), _average(fields10))


def _average(items: List[Tensor]) -> Tensor:
    if len(items) == 1:
        return items[0]
    total: Optional[Tensor] = None
    for item in items:
        total = item if total is None else total + item
    return total * (1.0 / len(items))
