"""
最小稠密张量引擎：前向算子 + 反向模式自动微分
"""

from . import ops
from .gradcheck import grad_check
from .ops import (
    activation,
    bilinear_resize,
    concat_channels,
    conv2d,
    layer_norm,
    linear,
    pixel_shuffle,
    pixel_unshuffle,
    sample_bilinear,
    softmax_lastdim,
)
from .rng import SeededRng
from .tensor import Parameter, Tensor, backward, enable_grad, is_grad_enabled, no_grad

__all__ = [
    'ops',
    'Tensor',
    'Parameter',
    'SeededRng',
    'backward',
    'no_grad',
    'enable_grad',
    'is_grad_enabled',
    'grad_check',
    'conv2d',
    'linear',
    'softmax_lastdim',
    'layer_norm',
    'activation',
    'bilinear_resize',
    'pixel_shuffle',
    'pixel_unshuffle',
    'concat_channels',
    'sample_bilinear',
]
