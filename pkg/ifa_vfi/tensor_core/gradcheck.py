"""
有限差分梯度校验
解析梯度在参数的原生精度下计算；数值梯度默认在 float64 中用中心差分求得
"""

from __future__ import annotations

import logging
from typing import Callable, List, Sequence

import numpy as np

from .rng import SeededRng
from .tensor import Parameter, Tensor, backward, no_grad

logger = logging.getLogger(__name__)


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-3,
               num_coords: int = 32, seed: int = 0, numeric_dtype=np.float64) -> float:
    """
    比较 backward 得到的梯度与中心差分 (f(p+eps) − f(p−eps)) / 2eps
    每个参数随机抽取 num_coords 个坐标（不足则全取），返回最大相对误差，
    分母为 max(|解析|, |数值|, 1e-6)
    """
    if eps <= 0:
        raise ValueError(f"eps 必须为正数: {eps}")
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(f())
    analytic: List[np.ndarray] = [p.grad.astype(np.float64).reshape(-1) for p in params]

    originals = [p.data for p in params]
    rng = SeededRng(seed)
    worst = 0.0
    try:
        for p in params:
            p.data = np.array(p.data, dtype=numeric_dtype)
        with no_grad():
            for p, grad in zip(params, analytic):
                flat = p.data.reshape(-1)
                for coord in rng.choice(flat.size, num_coords):
                    orig = flat[coord]
                    flat[coord] = orig + eps
                    f_plus = f().item()
                    flat[coord] = orig - eps
                    f_minus = f().item()
                    flat[coord] = orig
                    numeric = (f_plus - f_minus) / (2.0 * eps)
                    a = float(grad[coord])
                    rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
                    if rel > worst:
                        worst = rel
                        logger.debug("grad_check %s[%d]: analytic=%.6e numeric=%.6e rel=%.3e",
                                     p.name, coord, a, numeric, rel)
    finally:
        for p, data in zip(params, originals):
            p.data = data
    return worst
