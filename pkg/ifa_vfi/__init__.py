"""
帧间注意力视频插帧（桌面规模实现）
给定两帧 I_0、I_1 与时间步 t ∈ (0, 1)，合成中间帧 Î_t
"""

from .errors import (
    GraphError,
    IFAError,
    InvalidTimestepError,
    NonFiniteLossError,
    ShapeError,
    WeightsFormatError,
)
from .model import ModelWeights, ParamScope, build_model
from .settings import ModelConfig, TrainConfig, get_settings
from .synthesis import FeatureCache, interpolate

__version__ = "0.1.0"

__all__ = [
    'IFAError',
    'ShapeError',
    'GraphError',
    'InvalidTimestepError',
    'WeightsFormatError',
    'NonFiniteLossError',
    'ModelConfig',
    'TrainConfig',
    'get_settings',
    'ModelWeights',
    'ParamScope',
    'build_model',
    'FeatureCache',
    'interpolate',
]
