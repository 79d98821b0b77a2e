"""
模型参数注册表
- ModelWeights: 有序、按名字索引的参数集合
- ParamScope: 带前缀的视图，负责声明（确定性初始化）和前向取参
- build_model: 按声明顺序从种子构建完整模型
"""

from __future__ import annotations

import logging
import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .settings import ModelConfig
from .tensor_core import ops
from .tensor_core.rng import SeededRng
from .tensor_core.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


class ModelWeights:
    """命名参数的有序集合；名字在集合内唯一"""

    def __init__(self, config: ModelConfig, rng: Optional[SeededRng] = None):
        self.config = config
        self.rng = rng or SeededRng(0)
        self._params: Dict[str, Parameter] = {}
        # 参数数值每次整体更新（优化一步、加载权重）后递增
        self.version = 0

    # ── 声明 ──
    def add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"参数名重复: {name}")
        param = Parameter(data, name=name)
        self._params[name] = param
        return param

    def declare_uniform(self, name: str, shape: Sequence[int], fan_in: int) -> Parameter:
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        return self.add(name, self.rng.uniform(-bound, bound, shape))

    def declare_constant(self, name: str, shape: Sequence[int], value: float) -> Parameter:
        return self.add(name, np.full(tuple(shape), value, dtype=np.float32))

    # ── 访问 ──
    def __getitem__(self, name: str) -> Parameter:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"模型中不存在参数: {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def names(self) -> List[str]:
        return list(self._params)

    def items(self) -> List[Tuple[str, Parameter]]:
        return list(self._params.items())

    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def num_elements(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def mark_updated(self) -> int:
        self.version += 1
        return self.version

    def scope(self, prefix: str = "") -> "ParamScope":
        return ParamScope(self, prefix)

    def state_copy(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}


class ParamScope:
    """参数名前缀视图，例如 scope("backbone").child("low0") -> "backbone.low0.*" """

    def __init__(self, weights: ModelWeights, prefix: str = ""):
        self.weights = weights
        self.prefix = prefix

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def child(self, name: str) -> "ParamScope":
        return ParamScope(self.weights, self._full(name))

    def __getitem__(self, name: str) -> Parameter:
        return self.weights[self._full(name)]

    def has(self, name: str) -> bool:
        return self._full(name) in self.weights

    # ── 声明 ──
    def declare_conv(self, name: str, c_in: int, c_out: int, k: int, groups: int = 1, bias: bool = True) -> None:
        fan_in = (c_in // groups) * k * k
        self.weights.declare_uniform(self._full(f"{name}.weight"), (c_out, c_in // groups, k, k), fan_in)
        if bias:
            self.weights.declare_constant(self._full(f"{name}.bias"), (c_out,), 0.0)

    def declare_linear(self, name: str, c_in: int, c_out: int, bias: bool = True) -> None:
        self.weights.declare_uniform(self._full(f"{name}.weight"), (c_out, c_in), c_in)
        if bias:
            self.weights.declare_constant(self._full(f"{name}.bias"), (c_out,), 0.0)

    def declare_norm(self, name: str, channels: int) -> None:
        self.weights.declare_constant(self._full(f"{name}.gamma"), (channels,), 1.0)
        self.weights.declare_constant(self._full(f"{name}.beta"), (channels,), 0.0)

    # ── 前向 ──
    def _bias(self, name: str) -> Optional[Parameter]:
        return self[f"{name}.bias"] if self.has(f"{name}.bias") else None

    def conv(self, name: str, x: Tensor, stride: int = 1, padding: Optional[int] = None,
             dilation: int = 1, groups: int = 1) -> Tensor:
        weight = self[f"{name}.weight"]
        if padding is None:
            padding = dilation * (weight.shape[-1] - 1) // 2
        return ops.conv2d(x, weight, self._bias(name), stride=stride, padding=padding,
                          dilation=dilation, groups=groups)

    def linear(self, name: str, x: Tensor) -> Tensor:
        return ops.linear(x, self[f"{name}.weight"], self._bias(name))

    def norm(self, name: str, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self[f"{name}.gamma"], self[f"{name}.beta"])


def build_model(config: ModelConfig, seed: int = 0) -> ModelWeights:
    """按固定顺序声明 backbone / 运动估计头 / RefineNet 的全部参数"""
    from .backbone import declare_backbone
    from .synthesis.flow_head import declare_flow_heads
    from .synthesis.refine import declare_refine

    weights = ModelWeights(config, SeededRng(seed))
    root = weights.scope()
    declare_backbone(root.child("backbone"), config)
    declare_flow_heads(root.child("head"), config)
    declare_refine(root.child("refine"), config)
    logger.debug("✅ 模型构建完成: variant=%s, 参数 %d 个, 共 %d 个元素",
                 config.variant, len(weights), weights.num_elements())
    return weights
