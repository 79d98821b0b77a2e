"""
AdamW（解耦权重衰减）与 warmup + cosine 学习率
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..settings import TrainConfig
from ..tensor_core.tensor import Parameter


class LRSchedule(BaseModel):
    """线性 warmup 从 0 到 peak，然后余弦退火到 peak·min_ratio"""
    peak_lr: float
    warmup_steps: int = 0
    total_steps: int = 1
    min_ratio: float = 0.1

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "LRSchedule":
        return cls(peak_lr=cfg.peak_lr, warmup_steps=cfg.warmup_steps, total_steps=cfg.steps,
                   min_ratio=cfg.min_lr_ratio)

    def lr_at(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.peak_lr * step / self.warmup_steps
        decay_steps = max(1, self.total_steps - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / decay_steps)
        floor = self.peak_lr * self.min_ratio
        return floor + (self.peak_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


class OptimizerState(BaseModel):
    """每个参数的一阶/二阶矩估计与步数"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    exp_avg: Dict[str, np.ndarray] = Field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = Field(default_factory=dict)
    step: int = 0


def optimizer_step(params: Sequence[Parameter], state: OptimizerState, lr: float, cfg: TrainConfig,
                   grads: Optional[Sequence[np.ndarray]] = None) -> None:
    """
    p ← p − lr·wd·p
    m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
    p ← p − lr · m̂ / (sqrt(v̂) + eps)
    """
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for i, p in enumerate(params):
        g = (grads[i] if grads is not None else p.grad).astype(np.float64)
        key = p.name or f"param{i}"
        m = state.exp_avg.get(key)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float64)
            state.exp_avg_sq[key] = np.zeros(p.shape, dtype=np.float64)
        v = state.exp_avg_sq[key]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.exp_avg[key] = m
        state.exp_avg_sq[key] = v

        data = p.data.astype(np.float64)
        data = data - lr * cfg.weight_decay * data
        data = data - lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
        p.data = data.astype(np.float32)
