"""
插帧总流程
Î_t = refine(fuse(warp(I_0, I_1; F, O)))，其中 F、O 由注意力特征逐 stage 估计
与 t 无关的特征提取结果可以缓存，多个 t 共用
"""

from __future__ import annotations

import hashlib
import logging
import threading
from collections import OrderedDict
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..backbone import (
    SIZE_MULTIPLE,
    LowLevelPyramid,
    StageFeatures,
    cross_scale_embed,
    low_level_extract,
    motion_appearance_extract,
)
from ..errors import InvalidTimestepError, ShapeError
from ..model import ModelWeights
from ..tensor_core import ops
from ..tensor_core.tensor import Tensor, no_grad
from .flow_head import STAGE_ORDER, run_flow_heads
from .refine import refine
from .warp import FlowState, fuse_warped

logger = logging.getLogger(__name__)


class ExtractedFeatures(BaseModel):
    """与 t 无关的部分：两帧金字塔 + 两个 stage 的注意力特征"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    pyramid0: LowLevelPyramid
    pyramid1: LowLevelPyramid
    stages: StageFeatures


class SynthesisResult(BaseModel):
    """一次前向的全部输出；warped_per_stage 供 warp 损失使用"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: Tensor
    fused: Tensor
    state: FlowState
    states_per_stage: List[FlowState]
    warped_per_stage: List[Tensor]


class Diagnostics(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    flow: Tensor
    mask: Tensor
    fused: Tensor


def check_timestep(t: float) -> float:
    t = float(t)
    if not np.isfinite(t) or not 0.0 < t < 1.0:
        raise InvalidTimestepError(f"t 必须严格位于 (0, 1) 内: {t}")
    return t


def extract_features(image0: Tensor, image1: Tensor, weights: ModelWeights) -> ExtractedFeatures:
    if image0.shape != image1.shape:
        raise ShapeError(f"两帧尺寸不一致: {image0.shape} vs {image1.shape}")
    backbone = weights.scope("backbone")
    pyr0 = low_level_extract(image0, backbone)
    pyr1 = low_level_extract(image1, backbone)
    c0 = cross_scale_embed(pyr0, backbone)
    c1 = cross_scale_embed(pyr1, backbone)
    stages = motion_appearance_extract(c0, c1, weights.config, backbone)
    return ExtractedFeatures(pyramid0=pyr0, pyramid1=pyr1, stages=stages)


def synthesize(image0: Tensor, image1: Tensor, t: float, weights: ModelWeights,
               features: Optional[ExtractedFeatures] = None) -> SynthesisResult:
    """尺寸已是 16 倍数时的前向；训练直接调用（会记录计算图）"""
    if features is None:
        features = extract_features(image0, image1, weights)
    stage_map = {"stage1": features.stages.stage1, "stage2": features.stages.stage2}
    states = run_flow_heads([(name, stage_map[name]) for name in STAGE_ORDER], t, image0, image1,
                            weights.scope("head"))
    warped = [fuse_warped(image0, image1, s).fused for s in states]
    image = refine(warped[-1], features.pyramid0, features.pyramid1,
                   features.stages.stage1, features.stages.stage2, weights.scope("refine"))
    return SynthesisResult(image=image, fused=warped[-1], state=states[-1],
                           states_per_stage=states, warped_per_stage=warped)


def _digest(image0: Tensor, image1: Tensor) -> str:
    h = hashlib.sha256()
    for img in (image0, image1):
        arr = np.ascontiguousarray(img.data, dtype=np.float32)
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


class FeatureCache:
    """按 (权重版本, 输入内容摘要) 缓存特征提取结果；绑定一份权重，线程安全"""

    def __init__(self, weights: ModelWeights, max_entries: int = 4):
        self.weights = weights
        self.max_entries = max(1, max_entries)
        self._entries: "OrderedDict[Tuple[int, str], ExtractedFeatures]" = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get_or_compute(self, image0: Tensor, image1: Tensor) -> ExtractedFeatures:
        key = (self.weights.version, _digest(image0, image1))
        with self._lock:
            cached = self._entries.get(key)
            if cached is not None:
                self.hits += 1
                self._entries.move_to_end(key)
                return cached
            self.misses += 1

        # 提取在锁外进行，不同输入可以并行
        with no_grad():
            features = extract_features(image0, image1, self.weights)

        with self._lock:
            existing = self._entries.get(key)
            if existing is not None:
                return existing
            for stale in [k for k in self._entries if k[0] != key[0]]:
                del self._entries[stale]
            self._entries[key] = features
            while len(self._entries) > self.max_entries:
                self._entries.popitem(last=False)
            return features

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()


def pad_to_multiple(image: Tensor, multiple: int = SIZE_MULTIPLE) -> Tuple[Tensor, int, int]:
    h, w = image.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    return ops.pad2d(image, (0, ph, 0, pw), mode="edge"), h, w


def interpolate(image0: Tensor, image1: Tensor, t: float, weights: ModelWeights,
                cache: Optional[FeatureCache] = None) -> Tuple[Tensor, Diagnostics]:
    """
    推理入口：任意尺寸输入先复制填充到 16 的倍数，合成后裁剪回原尺寸
    返回 (Î_t, {F, O, Ĩ_t})
    """
    t = check_timestep(t)
    if image0.shape != image1.shape:
        raise ShapeError(f"两帧尺寸不一致: {image0.shape} vs {image1.shape}")
    if cache is not None and cache.weights is not weights:
        raise ValueError("FeatureCache 绑定的权重与本次调用不一致")
    with no_grad():
        padded0, h, w = pad_to_multiple(image0)
        padded1, _, _ = pad_to_multiple(image1)
        features = cache.get_or_compute(padded0, padded1) if cache is not None else None
        result = synthesize(padded0, padded1, t, weights, features)
        state = result.state.crop(h, w)
        diagnostics = Diagnostics(flow=state.flow, mask=state.mask, fused=result.fused[:, :, :h, :w])
        return result.image[:, :, :h, :w], diagnostics
