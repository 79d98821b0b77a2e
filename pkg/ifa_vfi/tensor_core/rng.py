"""
可复现的随机数源
同一个种子在任何平台上得到相同的抽样序列（PCG64）
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


class SeededRng:
    """对 numpy Generator 的薄封装，所有抽样都输出 float32"""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape: Sequence[int]) -> np.ndarray:
        return self._gen.uniform(low, high, size=tuple(shape)).astype(np.float32)

    def normal(self, shape: Sequence[int], scale: float = 1.0) -> np.ndarray:
        return (self._gen.standard_normal(size=tuple(shape)) * scale).astype(np.float32)

    def random(self) -> float:
        return float(self._gen.random())

    def integers(self, low: int, high: int, size: Optional[int] = None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, k: int) -> np.ndarray:
        """从 range(n) 中无放回抽取 k 个下标（k > n 时取全部）"""
        return self._gen.choice(n, size=min(k, n), replace=False)

    def spawn(self, offset: int) -> "SeededRng":
        return SeededRng(self.seed * 1_000_003 + offset)
