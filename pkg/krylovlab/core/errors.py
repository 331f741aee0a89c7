"""
KrylovLab 异常体系
所有领域异常都继承自 KrylovLabError，便于 CLI 和 API 层统一处理
"""

from typing import Optional


class KrylovLabError(Exception):
    """KrylovLab 基础异常"""


class DimensionMismatchError(KrylovLabError, ValueError):
    """矩阵与向量维度不一致"""


class InvalidInputError(KrylovLabError, ValueError):
    """参数不满足前置条件"""


class BreakdownError(KrylovLabError):
    """Lanczos 过程提前终止（找到了精确不变子空间），当前操作无法继续"""


class SingularProjectionError(KrylovLabError):
    """投影矩阵或原矩阵奇异"""


class NoAdversaryError(KrylovLabError):
    """v 位于 K^j 内，不存在使残差任意放大的不可区分矩阵"""


class CertificateError(KrylovLabError):
    """证书自校验失败"""


class WitnessNotFoundError(KrylovLabError):
    """本次随机搜索没有找到满足排序关系的见证实例"""


class MatrixParseError(KrylovLabError, ValueError):
    """
    矩阵文件格式错误

    Args:
        message: 错误描述
        line: 出错的行号（从 1 开始）
    """

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"第 {line} 行: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
