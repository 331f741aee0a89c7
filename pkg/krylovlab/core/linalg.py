"""
稠密对称矩阵与对称三对角矩阵的基础线性代数
其余所有模块都建立在这里的类型和函数之上
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import eigh_tridiagonal

from krylovlab.core.errors import DimensionMismatchError, InvalidInputError

logger = logging.getLogger(__name__)

Vector = NDArray[np.float64]

# 默认容差，每个函数都允许按调用覆盖
UNIT_NORM_TOL = 1e-12
SYMMETRY_TOL = 1e-12
ORTHO_DROP_TOL = 1e-10


def as_vector(v: ArrayLike) -> Vector:
    """
    转换为一维 float64 数组（拷贝）

    Raises:
        InvalidInputError: 不是非空一维数组
    """
    arr = np.array(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError(f"需要非空一维向量，实际形状: {arr.shape}")
    return arr


def normalize(v: ArrayLike) -> Vector:
    arr = as_vector(v)
    nrm = np.linalg.norm(arr)
    if nrm == 0.0:
        raise InvalidInputError("零向量无法归一化")
    return arr / nrm


def is_unit(v: Vector, tol: float = UNIT_NORM_TOL) -> bool:
    return abs(np.linalg.norm(v) - 1.0) <= tol


@dataclass(frozen=True)
class DenseSymmetric:
    """
    稠密对称矩阵
    构造时检查对称性并精确对称化，之后只读
    """

    entries: NDArray[np.float64]

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise DimensionMismatchError(f"需要非空方阵，实际形状: {arr.shape}")
        scale = max(1.0, float(np.max(np.abs(arr))))
        if np.max(np.abs(arr - arr.T)) > SYMMETRY_TOL * scale:
            raise InvalidInputError("矩阵不对称")
        arr = 0.5 * (arr + arr.T)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def to_dense(self) -> NDArray[np.float64]:
        return np.array(self.entries)

    def norm2(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvalsh(self.entries))))


@dataclass(frozen=True)
class SymTridiagonal:
    """
    对称三对角矩阵

    Args:
        diag: 主对角线 α_1..α_n
        offdiag: 次对角线 β_1..β_{n-1}
    """

    diag: NDArray[np.float64]
    offdiag: NDArray[np.float64]

    def __post_init__(self):
        d = np.array(self.diag, dtype=np.float64).ravel()
        e = np.array(self.offdiag, dtype=np.float64).ravel()
        if d.size == 0:
            raise InvalidInputError("三对角矩阵阶数必须为正")
        if e.size != d.size - 1:
            raise DimensionMismatchError(f"次对角线长度应为 {d.size - 1}，实际为 {e.size}")
        d.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "offdiag", e)

    @property
    def n(self) -> int:
        return self.diag.size

    def to_dense(self) -> NDArray[np.float64]:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def leading(self, j: int) -> "SymTridiagonal":
        """前 j×j 主子矩阵"""
        if not 1 <= j <= self.n:
            raise InvalidInputError(f"子矩阵阶数 {j} 超出范围 [1, {self.n}]")
        return SymTridiagonal(self.diag[:j], self.offdiag[: j - 1])

    def norm2(self) -> float:
        values = sym_tridiag_eigen(self).values
        return float(max(abs(values[0]), abs(values[-1])))


Matrix = Union[DenseSymmetric, SymTridiagonal]


@dataclass(frozen=True)
class Reflector:
    """
    Householder 反射 H = I - 2wwᵗ/‖w‖²
    对称且正交，Hw = -w，与 w 正交的向量不变
    """

    axis: Vector

    def apply(self, x: ArrayLike) -> Vector:
        x = as_vector(x)
        if x.size != self.axis.size:
            raise DimensionMismatchError(f"反射轴维度 {self.axis.size} 与向量维度 {x.size} 不一致")
        w = self.axis
        return x - (2.0 * np.dot(w, x) / np.dot(w, w)) * w

    def matrix(self) -> NDArray[np.float64]:
        w = self.axis
        return np.eye(w.size) - (2.0 / np.dot(w, w)) * np.outer(w, w)

    def conjugate(self, M: ArrayLike) -> NDArray[np.float64]:
        """计算 HMH（M 为稠密方阵）"""
        H = self.matrix()
        out = H @ np.asarray(M, dtype=np.float64) @ H
        return 0.5 * (out + out.T)


@dataclass(frozen=True)
class EigenDecomposition:
    """特征分解，特征值升序，特征向量按列存放且正交归一"""

    values: NDArray[np.float64]
    vectors: NDArray[np.float64]

    def reconstruct(self) -> NDArray[np.float64]:
        return (self.vectors * self.values) @ self.vectors.T


def apply(A: Matrix, v: ArrayLike) -> Vector:
    """
    矩阵向量乘

    Args:
        A: 稠密对称矩阵或对称三对角矩阵
        v: 向量

    Returns:
        Vector: A v

    Raises:
        DimensionMismatchError: 维度不一致
    """
    v = as_vector(v)
    if v.size != A.n:
        raise DimensionMismatchError(f"矩阵阶数 {A.n} 与向量维度 {v.size} 不一致")
    if isinstance(A, SymTridiagonal):
        y = A.diag * v
        y[:-1] += A.offdiag * v[1:]
        y[1:] += A.offdiag * v[:-1]
        return y
    return A.entries @ v


def sym_tridiag_eigen(T: SymTridiagonal) -> EigenDecomposition:
    """
    对称三对角矩阵的全部特征对（LAPACK stemr）

    Args:
        T: 对称三对角矩阵

    Returns:
        EigenDecomposition: 升序特征值与正交归一特征向量
    """
    if T.n == 1:
        return EigenDecomposition(values=np.array(T.diag), vectors=np.ones((1, 1)))
    values, vectors = eigh_tridiagonal(T.diag, T.offdiag)
    return EigenDecomposition(values=values, vectors=vectors)


def make_reflector(w: ArrayLike) -> Reflector:
    """
    构造反转 w 的反射

    Raises:
        InvalidInputError: w 为零向量
    """
    w = as_vector(w)
    if np.linalg.norm(w) == 0.0:
        raise InvalidInputError("反射轴不能是零向量")
    w.setflags(write=False)
    return Reflector(axis=w)


def orthonormalize(
    vectors: Sequence[ArrayLike], drop_tol: float = ORTHO_DROP_TOL
) -> Tuple[List[Vector], int]:
    """
    修正 Gram-Schmidt，外加一次完整的再正交化

    残差范数低于 drop_tol·(输入范数) 的向量视为线性相关而丢弃。

    Args:
        vectors: 待正交化的向量列表
        drop_tol: 相对丢弃容差

    Returns:
        Tuple[List[Vector], int]: (正交归一基, 秩)
    """
    if len(vectors) == 0:
        raise InvalidInputError("向量列表不能为空")
    arrays = [as_vector(v) for v in vectors]
    dim = arrays[0].size
    if any(a.size != dim for a in arrays):
        raise DimensionMismatchError("向量维度不一致")

    basis: List[Vector] = []
    for v in arrays:
        input_norm = np.linalg.norm(v)
        if input_norm == 0.0:
            continue
        w = v.copy()
        for _ in range(2):
            for q in basis:
                w -= np.dot(q, w) * q
        residual = np.linalg.norm(w)
        if residual <= drop_tol * input_norm:
            logger.debug(f"丢弃相关向量，残差 {residual:.3e}")
            continue
        basis.append(w / residual)
    return basis, len(basis)
