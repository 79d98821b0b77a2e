"""
异常定义
所有模块共用的异常层级，CLI 按类型映射退出码
"""


class IFAError(Exception):
    """插帧流水线的基础异常"""


class ShapeError(IFAError, ValueError):
    """张量形状不满足前置条件"""


class GraphError(IFAError):
    """对未记录计算图的张量调用 backward"""


class InvalidTimestepError(IFAError, ValueError):
    """时间步 t 不在 (0, 1) 之内"""


class WeightsFormatError(IFAError):
    """权重文件损坏、截断或与模型配置不匹配"""


class NonFiniteLossError(IFAError):
    """训练过程中出现 NaN/Inf 损失"""

    def __init__(self, step: int, value: float):
        super().__init__(f"非有限损失 (step={step}): {value}")
        self.step = step
        self.value = value
