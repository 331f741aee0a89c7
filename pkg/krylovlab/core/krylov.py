"""
Krylov 信息与 Lanczos 分解

矩阵对算法是隐藏的：只能通过 LinearOperator.apply 做矩阵向量乘，
每次调用都会计数，代价模型 "N_j 花费 j 个单位" 因此可以直接断言。
"""

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from krylovlab.core.errors import DimensionMismatchError, InvalidInputError
from krylovlab.core.linalg import (
    UNIT_NORM_TOL,
    DenseSymmetric,
    Matrix,
    SymTridiagonal,
    Vector,
    apply,
    as_vector,
    is_unit,
)

logger = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-12
OPERATOR_SYMMETRY_TOL = 1e-10


class LinearOperator:
    """
    隐藏矩阵 A，只暴露矩阵向量乘

    oracle_view 仅供测试和校验使用，算法本身不得读取。
    apply 是可重入的，计数器由锁保护。
    """

    def __init__(
        self,
        n: int,
        matvec: Callable[[Vector], ArrayLike],
        oracle_view: Optional[DenseSymmetric] = None,
        self_test: bool = False,
    ):
        if n < 1:
            raise InvalidInputError(f"算子维度必须为正，实际为 {n}")
        self.n = n
        self._matvec = matvec
        self.oracle_view = oracle_view
        self._lock = threading.Lock()
        self._applications = 0
        if self_test and not self.check_symmetry():
            raise InvalidInputError("算子不满足对称性 ⟨Av, u⟩ = ⟨v, Au⟩")

    @classmethod
    def from_matrix(cls, A: Union[Matrix, ArrayLike], self_test: bool = False) -> "LinearOperator":
        """由显式矩阵构造算子，并保留稠密 oracle 视图"""
        if isinstance(A, SymTridiagonal):
            return cls(A.n, lambda v: apply(A, v), DenseSymmetric(A.to_dense()), self_test)
        if not isinstance(A, DenseSymmetric):
            A = DenseSymmetric(np.asarray(A, dtype=np.float64))
        dense = A
        return cls(dense.n, lambda v: dense.entries @ v, dense, self_test)

    @property
    def applications(self) -> int:
        return self._applications

    def reset_counter(self) -> None:
        with self._lock:
            self._applications = 0

    def apply(self, v: ArrayLike) -> Vector:
        v = as_vector(v)
        if v.size != self.n:
            raise DimensionMismatchError(f"算子维度 {self.n} 与向量维度 {v.size} 不一致")
        with self._lock:
            self._applications += 1
        return as_vector(self._matvec(v))

    def __matmul__(self, v: ArrayLike) -> Vector:
        return self.apply(v)

    def dense(self) -> NDArray[np.float64]:
        """
        返回 oracle 稠密视图

        Raises:
            InvalidInputError: 算子没有 oracle 视图
        """
        if self.oracle_view is None:
            raise InvalidInputError("该算子没有 oracle 稠密视图")
        return self.oracle_view.to_dense()

    def check_symmetry(self, samples: int = 3, seed: int = 0, tol: float = OPERATOR_SYMMETRY_TOL) -> bool:
        """抽样检查 ⟨Av, u⟩ = ⟨v, Au⟩，不计入代价"""
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            u = rng.standard_normal(self.n)
            v = rng.standard_normal(self.n)
            Au = as_vector(self._matvec(u))
            Av = as_vector(self._matvec(v))
            scale = max(1.0, np.linalg.norm(Au) * np.linalg.norm(v), np.linalg.norm(Av) * np.linalg.norm(u))
            if abs(np.dot(Av, u) - np.dot(v, Au)) > tol * scale:
                return False
        return True


@dataclass(frozen=True)
class KrylovInfo:
    """
    Krylov 信息 N_j(A,b) = {b, Ab, ..., A^j b}

    Args:
        b: 单位起始向量
        powers: (j+1)×n 数组，第 i 行为 A^i b
    """

    b: Vector
    powers: NDArray[np.float64]

    @property
    def j(self) -> int:
        return self.powers.shape[0] - 1

    @property
    def cost(self) -> int:
        return self.j


@dataclass(frozen=True)
class LanczosFactorization:
    """
    A Q_j = Q_j T_j + q_{j+1} β_j e_jᵗ

    Args:
        Q: n×j 正交归一列
        alpha: T_j 的主对角线
        beta: T_j 的次对角线（长度 j-1）
        beta_next: β_j ≥ 0
        q_next: q_{j+1}，breakdown 时为零向量
        breakdown: 是否找到了精确不变子空间
    """

    Q: NDArray[np.float64]
    alpha: NDArray[np.float64]
    beta: NDArray[np.float64]
    beta_next: float
    q_next: Vector
    breakdown: bool

    @property
    def j(self) -> int:
        return self.alpha.size

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def b(self) -> Vector:
        return self.Q[:, 0]

    @property
    def T(self) -> SymTridiagonal:
        return SymTridiagonal(self.alpha, self.beta)

    def projected_matrix(self) -> NDArray[np.float64]:
        """(j+1)×j 矩阵 B̄：A Q_j 在 q_1..q_{j+1} 下的坐标"""
        j = self.j
        B = np.zeros((j + 1, j))
        B[:j, :] = self.T.to_dense()
        B[j, j - 1] = self.beta_next
        return B

    def extended_basis(self) -> NDArray[np.float64]:
        return np.column_stack([self.Q, self.q_next])

    def leading(self, k: int) -> "LanczosFactorization":
        """第 k 步的分解（前缀），不再调用算子"""
        if not 1 <= k <= self.j:
            raise InvalidInputError(f"步数 {k} 超出范围 [1, {self.j}]")
        if k == self.j:
            return self
        return LanczosFactorization(
            Q=self.Q[:, :k],
            alpha=self.alpha[:k],
            beta=self.beta[: k - 1],
            beta_next=float(self.beta[k - 1]),
            q_next=self.Q[:, k],
            breakdown=False,
        )


def _check_start(b: ArrayLike, n: int, j: int) -> Vector:
    b = as_vector(b)
    if b.size != n:
        raise DimensionMismatchError(f"起始向量维度 {b.size} 与算子维度 {n} 不一致")
    if not is_unit(b, UNIT_NORM_TOL):
        raise InvalidInputError(f"起始向量必须是单位向量，‖b‖ = {np.linalg.norm(b):.15g}")
    if j > n:
        raise InvalidInputError(f"步数 j = {j} 超过维度 n = {n}")
    return b


def krylov_info(A: LinearOperator, b: ArrayLike, j: int) -> KrylovInfo:
    """
    计算 N_j(A,b)，恰好调用算子 j 次

    Raises:
        InvalidInputError: b 非单位向量、j < 0 或 j > n
    """
    if j < 0:
        raise InvalidInputError(f"步数不能为负: {j}")
    b = _check_start(b, A.n, j)
    powers = [b]
    for _ in range(j):
        powers.append(A.apply(powers[-1]))
    return KrylovInfo(b=b, powers=np.vstack(powers))


def lanczos_factorize(
    A: LinearOperator, b: ArrayLike, j: int, breakdown_tol: float = BREAKDOWN_TOL
) -> LanczosFactorization:
    """
    带完全再正交化的 Lanczos 过程

    β_i 取非负，符号吸收进 q_{i+1}。若在第 i 步出现 β_i = 0，
    分解在 i 处截断并标记 breakdown（这不是错误）。

    Args:
        A: 隐藏算子
        b: 单位起始向量
        j: 步数，1 ≤ j ≤ n
        breakdown_tol: 相对 ‖A q_i‖ 的 breakdown 判定容差

    Returns:
        LanczosFactorization: 第 j 步（或 breakdown 步）的分解
    """
    if j < 1:
        raise InvalidInputError(f"Lanczos 步数必须至少为 1，实际为 {j}")
    b = _check_start(b, A.n, j)

    n = A.n
    Q = np.zeros((n, j))
    alpha = np.zeros(j)
    beta = np.zeros(max(j - 1, 0))
    q = b
    q_prev = np.zeros(n)
    beta_prev = 0.0
    beta_next = 0.0
    q_next = np.zeros(n)
    breakdown = False
    steps = j

    for i in range(j):
        Q[:, i] = q
        w = A.apply(q)
        scale = max(np.linalg.norm(w), np.finfo(float).tiny)
        alpha[i] = np.dot(q, w)
        w = w - alpha[i] * q - beta_prev * q_prev
        for _ in range(2):
            c = Q[:, : i + 1].T @ w
            w -= Q[:, : i + 1] @ c
            alpha[i] += c[i]
        beta_i = np.linalg.norm(w)

        if beta_i <= breakdown_tol * scale:
            steps = i + 1
            breakdown = True
            logger.debug(f"Lanczos 在第 {steps} 步 breakdown，β = {beta_i:.3e}")
            break
        if i == j - 1:
            beta_next = float(beta_i)
            q_next = w / beta_i
        else:
            beta[i] = beta_i
            q_prev, q = q, w / beta_i
            beta_prev = beta_i

    if breakdown and steps < j:
        logger.warning(f"Lanczos breakdown: 请求 {j} 步，在第 {steps} 步找到不变子空间")

    return LanczosFactorization(
        Q=Q[:, :steps],
        alpha=alpha[:steps],
        beta=beta[: steps - 1],
        beta_next=beta_next,
        q_next=q_next,
        breakdown=breakdown,
    )


def expand_in_basis(fact: LanczosFactorization, coeffs: ArrayLike) -> Vector:
    """
    返回 Q·coeffs，线性组合在代价模型中是免费的

    Raises:
        DimensionMismatchError: 系数个数超过 j
    """
    coeffs = as_vector(coeffs)
    if coeffs.size > fact.j:
        raise DimensionMismatchError(f"系数个数 {coeffs.size} 超过步数 {fact.j}")
    return fact.Q[:, : coeffs.size] @ coeffs


def arnoldi(
    A: ArrayLike, b: ArrayLike, j: int, breakdown_tol: float = BREAKDOWN_TOL
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    稠密非对称矩阵的 Arnoldi 过程（仅用于校验路径）

    Returns:
        Tuple[ndarray, ndarray]: (Q, H̄)，Q 为 n×(k+1)，H̄ 为 (k+1)×k 上 Hessenberg；
        breakdown 时 Q 只有 k 列且 H̄ 最后一行为零
    """
    M = np.asarray(A, dtype=np.float64)
    n = M.shape[0]
    b = _check_start(b, n, j)
    Q = np.zeros((n, j + 1))
    H = np.zeros((j + 1, j))
    Q[:, 0] = b
    for i in range(j):
        w = M @ Q[:, i]
        scale = max(np.linalg.norm(w), np.finfo(float).tiny)
        for _ in range(2):
            c = Q[:, : i + 1].T @ w
            w -= Q[:, : i + 1] @ c
            H[: i + 1, i] += c
        h = np.linalg.norm(w)
        if h <= breakdown_tol * scale:
            return Q[:, : i + 1], H[: i + 2, : i + 1]
        H[i + 1, i] = h
        Q[:, i + 1] = w / h
    return Q, H
