"""
合成训练数据：平滑纹理的匀速水平平移
I_τ(x, y) = T(x − shift·τ, y)，因此 F_{t→0}.x = −shift·t，F_{t→1}.x = shift·(1−t)
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..tensor_core.rng import SeededRng
from ..tensor_core.tensor import Tensor


class Triplet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    image0: Tensor
    image_t: Tensor
    image1: Tensor
    t: float


def _texture(x: np.ndarray, y: np.ndarray, size: int, seed: int, waves: int = 6) -> np.ndarray:
    """若干正弦波叠加的平滑纹理，可在任意亚像素位置精确取值；输出 (3, h, w)，值域约 [0.1, 0.9]"""
    gen = np.random.Generator(np.random.PCG64(seed))
    channels = []
    for _ in range(3):
        freq = gen.integers(1, 5, size=(waves, 2))
        phase = gen.uniform(0.0, 2.0 * np.pi, size=waves)
        amp = gen.uniform(0.5, 1.0, size=waves)
        acc = np.zeros(np.broadcast(x, y).shape)
        for (fx, fy), ph, a in zip(freq, phase, amp):
            acc += a * np.sin(2.0 * np.pi * (fx * x + fy * y) / size + ph)
        channels.append(0.5 + 0.4 * acc / amp.sum())
    return np.stack(channels)


def render_frame(tau: float, size: int = 64, shift: float = 4.0, seed: int = 0) -> Tensor:
    ys, xs = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    frame = _texture(xs - shift * tau, ys, size, seed)
    return Tensor(frame[None].astype(np.float32))


def make_translation_triplet(size: int = 64, shift: float = 4.0, t: float = 0.5, seed: int = 0) -> Triplet:
    return Triplet(
        image0=render_frame(0.0, size, shift, seed),
        image_t=render_frame(t, size, shift, seed),
        image1=render_frame(1.0, size, shift, seed),
        t=t,
    )


def make_translation_sequence(num_frames: int = 7, size: int = 64, shift: float = 4.0, seed: int = 0) -> List[Tensor]:
    """整段平移：首尾两帧之间总位移为 shift"""
    if num_frames < 3:
        raise ValueError(f"序列至少需要 3 帧: {num_frames}")
    return [render_frame(i / (num_frames - 1), size, shift, seed) for i in range(num_frames)]


def sample_triplet(frames: Sequence[Tensor], rng: SeededRng) -> Triplet:
    """从序列中有序抽取 i < j < k 三帧，t = (j − i) / (k − i)"""
    n = len(frames)
    if n < 3:
        raise ValueError(f"序列至少需要 3 帧: {n}")
    i = int(rng.integers(0, n - 2))
    k = int(rng.integers(i + 2, n))
    j = int(rng.integers(i + 1, k))
    return Triplet(image0=frames[i], image_t=frames[j], image1=frames[k], t=(j - i) / (k - i))
