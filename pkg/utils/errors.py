"""
统一异常定义
库代码抛出异常，编排层（pipeline 节点 / manager）捕获并记录日志
"""
from typing import Optional, Sequence


class NpprError(Exception):
    """所有 NPPR 异常的基类"""


class ShapeError(NpprError, ValueError):
    """张量形状不匹配"""

    def __init__(self, op: str, shapes: Sequence[tuple], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        shapes_str = ", ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {shapes_str}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class ConfigError(NpprError, ValueError):
    """配置校验失败，key_path 指明出错的配置键（如 gmm.modes）"""

    def __init__(self, message: str, key_path: Optional[str] = None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class ModeError(NpprError, ValueError):
    """依赖模式缺少必需的条件输入"""


class CheckpointError(NpprError):
    """checkpoint / 权重快照 版本不符或文件损坏"""


class GridCapError(NpprError, ValueError):
    """oracle 网格点数超过上限"""


class VerificationError(NpprError, ValueError):
    """待比较的报告不属于同一实验"""


class EmptyDatasetError(NpprError, ValueError):
    """数据集为空"""
