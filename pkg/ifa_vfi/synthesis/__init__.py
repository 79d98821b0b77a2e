"""
合成模块：运动估计头、后向 warp 融合、RefineNet 与总流程
"""

from .flow_head import estimate_motion_stage, motion_stage_residual, run_flow_heads
from .pipeline import (
    Diagnostics,
    ExtractedFeatures,
    FeatureCache,
    SynthesisResult,
    check_timestep,
    extract_features,
    interpolate,
    pad_to_multiple,
    synthesize,
)
from .refine import refine
from .warp import FlowState, WarpResult, backward_warp, blend, fuse_warped

__all__ = [
    'FlowState',
    'WarpResult',
    'backward_warp',
    'blend',
    'fuse_warped',
    'estimate_motion_stage',
    'motion_stage_residual',
    'run_flow_heads',
    'refine',
    'ExtractedFeatures',
    'SynthesisResult',
    'Diagnostics',
    'FeatureCache',
    'check_timestep',
    'extract_features',
    'synthesize',
    'interpolate',
    'pad_to_multiple',
]
