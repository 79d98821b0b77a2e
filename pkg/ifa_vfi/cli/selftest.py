"""
不依赖 pytest 的自检：按模块分组运行关键不变量
fast 级别跳过过拟合训练和整模型梯度校验
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..attention import (
    AttentionConfig,
    compute_attention_map,
    declare_block,
    inter_frame_attention,
    scale_motion,
    window_partition,
    window_reverse,
)
from ..model import ModelWeights, build_model
from ..settings import ModelConfig, TrainConfig
from ..synthesis.pipeline import FeatureCache, interpolate, synthesize
from ..synthesis.warp import backward_warp
from ..tensor_core import ops
from ..tensor_core.gradcheck import grad_check
from ..tensor_core.rng import SeededRng
from ..tensor_core.tensor import Parameter, Tensor, no_grad
from ..training.losses import collapse_pyramid, laplacian_pyramid, total_loss
from ..training.metrics import interpolation_error, psnr, ssim
from ..training.synthetic import make_translation_triplet
from ..training.trainer import train_overfit
from .weights_io import dumps_weights, loads_weights

logger = logging.getLogger(__name__)

Check = Callable[[], None]


def _rand(rng: SeededRng, *shape: int) -> Tensor:
    return Tensor(rng.normal(shape))


def _naive_conv(x: np.ndarray, w: np.ndarray, stride: int, padding: int, dilation: int) -> np.ndarray:
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    ow = (wd + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for b in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    for ci in range(c):
                        for u in range(k):
                            for v in range(k):
                                out[b, o, i, j] += xp[b, ci, i * stride + u * dilation, j * stride + v * dilation] * w[o, ci, u, v]
    return out


def check_tensor_core() -> None:
    rng = SeededRng(1)
    x = _rand(rng, 1, 2, 7, 7)
    w = _rand(rng, 3, 2, 3, 3)
    got = ops.conv2d(x, w, stride=2, padding=2, dilation=2).data
    ref = _naive_conv(x.data, w.data, 2, 2, 2)
    assert np.allclose(got, ref, rtol=1e-5, atol=1e-5), "conv2d 与逐项求和不一致"

    s = ops.softmax_lastdim(_rand(rng, 4, 9)).data.astype(np.float64)
    assert np.all(s >= 0) and np.allclose(s.sum(axis=-1), 1.0, atol=1e-6), "softmax 行和不为 1"

    y = _rand(rng, 1, 8, 3, 3)
    assert np.array_equal(ops.pixel_unshuffle(ops.pixel_shuffle(y, 2), 2).data, y.data), "pixel_shuffle 逆映射错误"

    p = Parameter(rng.normal((3, 4)), name="p")
    err = grad_check(lambda: (ops.gelu(p) * p).sum(), [p], num_coords=8)
    assert err < 5e-3, f"gelu 梯度误差过大: {err}"


def _brute_force_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """单窗口、单头：逐对枚举 query-key"""
    _, h, w = q.shape
    coords = np.stack(np.meshgrid(np.linspace(-1, 1, w) if w > 1 else [0.0],
                                  np.linspace(-1, 1, h) if h > 1 else [0.0], indexing="xy"))
    out = np.zeros_like(v, dtype=np.float64)
    motion = np.zeros((2, h, w))
    scale = 1.0 / np.sqrt(q.shape[0])
    for i in range(h):
        for j in range(w):
            logits = np.array([[q[:, i, j] @ k[:, a, b] * scale for b in range(w)] for a in range(h)])
            weights = np.exp(logits - logits.max())
            weights /= weights.sum()
            out[:, i, j] = np.einsum("ab,cab->c", weights, v)
            motion[:, i, j] = np.einsum("ab,cab->c", weights, coords) - coords[:, i, j]
    return out, motion


def _identity_attention_scope(channels: int) -> ModelWeights:
    weights = ModelWeights(ModelConfig.preset("tiny"))
    declare_block(weights.scope("blk"), channels)
    for name in ("q", "k", "v", "proj"):
        weights[f"blk.attn.{name}.weight"].data = np.eye(channels, dtype=np.float32)
    return weights


def check_attention() -> None:
    rng = SeededRng(2)
    weights = _identity_attention_scope(2)
    scope = weights.scope("blk.attn")
    cfg = AttentionConfig(window_size=7, channels=2, num_heads=1)
    with no_grad():
        a0 = _rand(rng, 1, 2, 4, 5)
        a1 = _rand(rng, 1, 2, 4, 5)
        out = inter_frame_attention(a0, a1, cfg, scope)
        ref_app, ref_motion = _brute_force_attention(a0.data[0], a1.data[0], a1.data[0])
        assert np.allclose(out.appearance0.data[0], a0.data[0] + ref_app, atol=1e-5), "外观分支与逐对枚举不一致"
        assert np.allclose(out.motion01.data[0], ref_motion, atol=1e-5), "运动分支与逐对枚举不一致"

        feat = _rand(rng, 1, 2, 10, 10)
        shifted = AttentionConfig(window_size=7, channels=2, num_heads=1, shifted=True)
        amap, _ = compute_attention_map(feat, _rand(rng, 1, 2, 10, 10), shifted, scope)
        s = amap.weights.data.astype(np.float64)
        rows = s.sum(axis=-1)[..., amap.layout.query_valid]
        assert np.allclose(rows, 1.0, atol=1e-6), "注意力行和不为 1"
        assert np.all(s[..., ~amap.layout.valid] == 0.0), "被屏蔽位置的权重不为 0"

        windows, layout = window_partition(feat, 7, 3)
        assert np.array_equal(window_reverse(windows, layout).data, feat.data), "窗口划分往返不一致"

        motion = out.motion01
        assert np.array_equal(scale_motion(motion, 0.0).data, np.zeros_like(motion.data))
        assert np.array_equal(scale_motion(motion, 1.0).data, motion.data)


def check_warp() -> None:
    rng = SeededRng(3)
    img = Tensor(rng.uniform(0.0, 1.0, (1, 3, 6, 6)))
    zero = Tensor(np.zeros((1, 2, 6, 6), dtype=np.float32))
    assert np.array_equal(backward_warp(img, zero).data, img.data), "零光流不是恒等映射"

    ramp = Tensor(np.tile(np.arange(6, dtype=np.float32), (1, 1, 6, 1)))
    half = np.zeros((1, 2, 6, 6), dtype=np.float32)
    half[:, 0] = 0.5
    out = backward_warp(ramp, Tensor(half)).data
    assert np.allclose(out[..., :5], np.arange(6)[:5] + 0.5, atol=1e-6), "半像素平移结果错误"


def check_losses() -> None:
    rng = SeededRng(4)
    img = Tensor(rng.uniform(0.0, 1.0, (1, 3, 32, 32)))
    rec = collapse_pyramid(laplacian_pyramid(img)).data
    assert float(np.abs(rec - img.data).mean()) <= 1e-5, "金字塔重建误差过大"
    other = Tensor(rng.uniform(0.0, 1.0, (1, 3, 32, 32)))
    report = total_loss([other, img], img, img)
    assert report.total == report.recompute_total(), "总损失与分项不一致"


def check_metrics() -> None:
    a = np.full((3, 8, 8), 0.5)
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-6, "PSNR 闭式结果错误"
    assert psnr(a, a) == float("inf")
    assert abs(ssim(a, a) - 1.0) < 1e-6
    assert abs(interpolation_error(a, a + 2.0 / 255.0) - 2.0) < 1e-6


def check_serialization() -> None:
    weights = build_model(ModelConfig.preset("tiny"), seed=5)
    restored = loads_weights(dumps_weights(weights))
    assert restored.names() == weights.names(), "参数顺序不一致"
    for (_, a), (_, b) in zip(weights.items(), restored.items()):
        assert np.array_equal(a.data, b.data), f"参数 {a.name} 往返不一致"


def check_pipeline() -> None:
    rng = SeededRng(6)
    weights = build_model(ModelConfig.preset("tiny"), seed=6)
    i0 = Tensor(rng.uniform(0.0, 1.0, (1, 3, 32, 32)))
    i1 = Tensor(rng.uniform(0.0, 1.0, (1, 3, 32, 32)))
    cache = FeatureCache(weights)
    for t in (0.25, 0.75):
        cached, _ = interpolate(i0, i1, t, weights, cache)
        plain, _ = interpolate(i0, i1, t, weights)
        assert np.array_equal(cached.data, plain.data), f"t={t} 缓存结果与非缓存不一致"
        assert np.all(np.isfinite(cached.data))


# 整模型梯度校验抽查的参数：覆盖金字塔、嵌入、注意力、运动特征、两级估计头与 RefineNet
GRADCHECK_PARAMS = (
    "backbone.low.conv0a.weight",
    "backbone.embed.fuse.weight",
    "backbone.stage1.block0.attn.q.weight",
    "backbone.stage2.block0.motion.weight",
    "head.stage2.conv3.weight",
    "head.stage1.conv1.weight",
    "refine.out.weight",
)


def full_model_gradient_error(num_coords: int = 32, eps: float = 1e-4, seed: int = 7) -> float:
    """float32 的 tiny 模型上，对 GRADCHECK_PARAMS 做中心差分比对，返回最大相对误差"""
    weights = build_model(ModelConfig.preset("tiny"), seed=seed)
    triplet = make_translation_triplet(size=32, seed=seed)
    subset = [weights[name] for name in GRADCHECK_PARAMS]

    def loss() -> Tensor:
        out = synthesize(triplet.image0, triplet.image1, triplet.t, weights)
        return total_loss(out.warped_per_stage, out.image, triplet.image_t).loss

    return grad_check(loss, subset, eps=eps, num_coords=num_coords, seed=seed)


def check_gradients() -> None:
    err = full_model_gradient_error()
    assert err < 5e-3, f"整模型梯度误差 {err}"


def check_overfit() -> None:
    weights = build_model(ModelConfig.preset("tiny"), seed=0)
    triplet = make_translation_triplet()
    result = train_overfit(weights, triplet, 200, TrainConfig(steps=200))
    curve = result.curve
    assert curve[-1] <= 0.5 * curve[0], f"损失未下降到一半: {curve[0]:.4f} -> {curve[-1]:.4f}"


FAST_GROUPS: List[Tuple[str, Check]] = [
    ("tensor_core", check_tensor_core),
    ("attention", check_attention),
    ("warp", check_warp),
    ("losses", check_losses),
    ("metrics", check_metrics),
    ("serialization", check_serialization),
    ("pipeline", check_pipeline),
]
FULL_GROUPS: List[Tuple[str, Check]] = FAST_GROUPS + [
    ("gradients", check_gradients),
    ("overfit", check_overfit),
]


@contextmanager
def _perturbed_softmax() -> Iterator[None]:
    original = ops.softmax_lastdim

    def faulty(x, mask=None):
        return original(x, mask) * 1.01

    ops.softmax_lastdim = faulty
    try:
        yield
    finally:
        ops.softmax_lastdim = original


FAULTS: Dict[str, Callable] = {"softmax": _perturbed_softmax}


def run_selftest(level: str = "fast", inject_fault: Optional[str] = None) -> Tuple[int, List[str]]:
    """返回 (退出码, 失败的分组名)"""
    groups = FULL_GROUPS if level == "full" else FAST_GROUPS
    failed: List[str] = []

    @contextmanager
    def _no_fault() -> Iterator[None]:
        yield

    fault = FAULTS[inject_fault]() if inject_fault else _no_fault()
    with fault:
        for name, check in groups:
            start = time.perf_counter()
            try:
                check()
            except Exception as exc:
                failed.append(name)
                print(f"❌ {name}: {exc}")
                continue
            print(f"✅ {name} ({time.perf_counter() - start:.2f}s)")
    if failed:
        print(f"❌ 自检失败: {', '.join(failed)}")
        return 1, failed
    print(f"✅ 自检通过 ({level})")
    return 0, failed
