"""
桌面规模训练：在单个三元组上反复执行 前向 → 损失 → 反向 → AdamW
"""

from __future__ import annotations

import logging
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from ..errors import NonFiniteLossError
from ..model import ModelWeights
from ..settings import TrainConfig
from ..synthesis.pipeline import synthesize
from ..tensor_core.rng import SeededRng
from ..tensor_core.tensor import Tensor, backward
from .losses import LossReport, total_loss
from .optimizer import LRSchedule, OptimizerState, optimizer_step
from .synthetic import Triplet

logger = logging.getLogger(__name__)


class TrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    reports: List[LossReport] = Field(default_factory=list)
    learning_rates: List[float] = Field(default_factory=list)

    @property
    def curve(self) -> List[float]:
        return [r.total for r in self.reports]


def _map_images(triplet: Triplet, fn: Callable[[np.ndarray], np.ndarray]) -> Triplet:
    return Triplet(
        image0=Tensor(np.ascontiguousarray(fn(triplet.image0.data))),
        image_t=Tensor(np.ascontiguousarray(fn(triplet.image_t.data))),
        image1=Tensor(np.ascontiguousarray(fn(triplet.image1.data))),
        t=triplet.t,
    )


def augment_triplet(triplet: Triplet, rng: SeededRng) -> Triplet:
    """随机水平/垂直翻转、时间反转、90 度旋转；三帧同时变换"""
    if rng.random() < 0.5:
        triplet = _map_images(triplet, lambda a: a[..., ::-1])
    if rng.random() < 0.5:
        triplet = _map_images(triplet, lambda a: a[..., ::-1, :])
    if rng.random() < 0.5:
        triplet = Triplet(image0=triplet.image1, image_t=triplet.image_t, image1=triplet.image0, t=1.0 - triplet.t)
    if rng.random() < 0.5:
        triplet = _map_images(triplet, lambda a: np.rot90(a, k=1, axes=(-2, -1)))
    return triplet


def train_overfit(weights: ModelWeights, triplet: Triplet, steps: int, cfg: Optional[TrainConfig] = None,
                  progress: bool = False) -> TrainResult:
    """对单个三元组过拟合 steps 步，返回每步损失"""
    cfg = cfg or TrainConfig(steps=steps)
    schedule = LRSchedule.from_config(cfg.model_copy(update={"steps": steps}))
    state = OptimizerState()
    rng = SeededRng(cfg.seed)
    params = weights.parameters()
    result = TrainResult()

    if steps <= 0:
        return result
    logger.info("🚀 开始训练: steps=%d, peak_lr=%g, warmup=%d, augment=%s",
                steps, cfg.peak_lr, cfg.warmup_steps, cfg.augment)
    for step in tqdm(range(steps), desc="train", disable=not progress):
        sample = augment_triplet(triplet, rng) if cfg.augment else triplet
        weights.zero_grad()
        out = synthesize(sample.image0, sample.image1, sample.t, weights)
        report = total_loss(out.warped_per_stage, out.image, sample.image_t, cfg.loss_lambda)
        if not report.is_finite():
            logger.error("❌ 第 %d 步损失非有限: %s", step, report.total)
            raise NonFiniteLossError(step, report.total)
        backward(report.loss)
        lr = schedule.lr_at(step)
        optimizer_step(params, state, lr, cfg)
        weights.mark_updated()
        report.loss = None
        result.reports.append(report)
        result.learning_rates.append(lr)
        logger.debug("step=%d total=%.6f rec=%.6f lr=%.3e", step, report.total, report.rec_loss, lr)

    logger.info("✅ 训练完成: 初始损失 %.6f → 最终损失 %.6f", result.curve[0], result.curve[-1])
    return result
