"""
训练模块：损失、优化器、指标与过拟合训练
"""

from .losses import LossReport, collapse_pyramid, laplacian_loss, laplacian_pyramid, total_loss
from .metrics import PSNR_IDENTICAL, interpolation_error, psnr, ssim
from .optimizer import LRSchedule, OptimizerState, optimizer_step
from .synthetic import Triplet, make_translation_sequence, make_translation_triplet, sample_triplet
from .trainer import TrainResult, augment_triplet, train_overfit

__all__ = [
    'LossReport',
    'laplacian_pyramid',
    'collapse_pyramid',
    'laplacian_loss',
    'total_loss',
    'psnr',
    'ssim',
    'interpolation_error',
    'PSNR_IDENTICAL',
    'LRSchedule',
    'OptimizerState',
    'optimizer_step',
    'Triplet',
    'make_translation_triplet',
    'make_translation_sequence',
    'sample_triplet',
    'TrainResult',
    'augment_triplet',
    'train_overfit',
]
