"""
命令行前端：插帧、光流可视化、文件夹评估、训练与自检
"""

from .evaluate import EvalSummary, evaluate_folder, read_report
from .flow_vis import flow_to_color, read_flo, write_flo
from .image_io import load_image, quantize, save_image
from .main import build_parser, main
from .selftest import run_selftest
from .weights_io import dumps_weights, load_weights, loads_weights, save_weights

__all__ = [
    'main',
    'build_parser',
    'load_image',
    'save_image',
    'quantize',
    'save_weights',
    'load_weights',
    'dumps_weights',
    'loads_weights',
    'flow_to_color',
    'write_flo',
    'read_flo',
    'evaluate_folder',
    'read_report',
    'EvalSummary',
    'run_selftest',
]
