"""
线性方程组 Ax = b 的 Krylov 信息算法：MR、Galerkin/CG、Chebyshev，
以及广义 p 残差准则和 q(ε) 预测公式

代价约定：第 j 步的 MR 消耗 N_j = {b, ..., A^j b}（需要额外的 A^j b 来确定系数）；
Chebyshev 的 x_j ∈ K^j 只需要 N_{j-1}。
"""

import logging
from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, Decimal, localcontext
from typing import List, Optional, Tuple, Union

import numpy as np
from numpy.polynomial import Chebyshev, Polynomial
from numpy.typing import ArrayLike

from krylovlab.core.errors import (
    BreakdownError,
    DimensionMismatchError,
    InvalidInputError,
    SingularProjectionError,
)
from krylovlab.core.krylov import LanczosFactorization, LinearOperator, lanczos_factorize
from krylovlab.core.linalg import Vector, as_vector, sym_tridiag_eigen
from krylovlab.models.schemas import ChebyshevParams

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-14
Q_EPSILON_PRECISION = 50


@dataclass(frozen=True)
class SolveTrace:
    """
    迭代轨迹，下标即步数：iterates[0] = 0，residual_norms[0] = ‖b‖

    Args:
        iterates: x_0, x_1, ..., x_J
        residual_norms: ‖b - A x_j‖
        costs: 第 j 个迭代所消耗的信息单位
        stop_step: 第一个满足 ‖r_j‖ ≤ ε‖b‖ 的 j，未达到为 None
    """

    iterates: List[Vector]
    residual_norms: np.ndarray
    costs: List[int]
    stop_step: Optional[int] = None
    algorithm: str = field(default="")

    @property
    def stop_cost(self) -> Optional[int]:
        if self.stop_step is None:
            return None
        return self.costs[self.stop_step]


def _first_below(residuals: np.ndarray, threshold: float) -> Optional[int]:
    for j in range(1, residuals.size):
        if residuals[j] <= threshold:
            return j
    return None


def _extended_rhs(fact: LanczosFactorization, b: Vector) -> np.ndarray:
    b = as_vector(b)
    if b.size != fact.n:
        raise DimensionMismatchError(f"右端项维度 {b.size} 与分解维度 {fact.n} 不一致")
    return np.concatenate([fact.Q.T @ b, [np.dot(fact.q_next, b)]])


def mr_step(fact: LanczosFactorization, b: ArrayLike) -> Vector:
    """
    最小残差：在 K^j 上极小化 ‖b - Av‖

    A Q_j = Q_{j+1} B̄，于是问题化为 (j+1)×j 的最小二乘。

    Args:
        fact: 第 j 步 Lanczos 分解
        b: 右端项

    Returns:
        Vector: x ∈ K^j

    Raises:
        BreakdownError: 分解步数小于 1
    """
    if fact.j < 1:
        raise BreakdownError("MR 需要至少一步 Lanczos 分解")
    rhs = _extended_rhs(fact, b)
    y, *_ = np.linalg.lstsq(fact.projected_matrix(), rhs, rcond=None)
    return fact.Q @ y


def mr_residual(fact: LanczosFactorization, b: ArrayLike) -> float:
    """MR 残差 ‖b - A x_j‖，在投影坐标中计算（b ∈ span Q_{j+1} 时精确）"""
    rhs = _extended_rhs(fact, b)
    B = fact.projected_matrix()
    y, *_ = np.linalg.lstsq(B, rhs, rcond=None)
    return float(np.linalg.norm(rhs - B @ y))


def cg_step(fact: LanczosFactorization, b: ArrayLike) -> Vector:
    """
    Galerkin 条件 Q_jᵗ(b - Ax) = 0，即 T_j y = Q_jᵗ b

    A 为 SPD 时与共轭梯度迭代相同。

    Raises:
        SingularProjectionError: T_j 奇异（非 SPD 时可能出现）
    """
    if fact.j < 1:
        raise BreakdownError("CG 需要至少一步 Lanczos 分解")
    b = as_vector(b)
    eig = sym_tridiag_eigen(fact.T)
    scale = max(np.max(np.abs(eig.values)), np.finfo(float).tiny)
    if np.min(np.abs(eig.values)) <= SINGULAR_TOL * scale:
        raise SingularProjectionError(f"第 {fact.j} 步投影矩阵 T_j 奇异")
    rhs = fact.Q.T @ b
    y = eig.vectors @ ((eig.vectors.T @ rhs) / eig.values)
    return fact.Q @ y


def _galerkin_trace(A: LinearOperator, b: ArrayLike, eps: float, max_steps: int, algorithm: str) -> SolveTrace:
    b = as_vector(b)
    fact = lanczos_factorize(A, b, min(max_steps, A.n))
    iterates = [np.zeros(A.n)]
    residuals = [float(np.linalg.norm(b))]
    for j in range(1, fact.j + 1):
        step = fact.leading(j)
        if algorithm == "mr":
            x = mr_step(step, b)
            residuals.append(mr_residual(step, b))
        else:
            x = cg_step(step, b)
            # b - Ax = -q_{j+1} β_j y_j
            y = step.Q.T @ x
            residuals.append(float(step.beta_next * abs(y[-1])))
        iterates.append(x)
    residuals = np.asarray(residuals)
    return SolveTrace(
        iterates=iterates,
        residual_norms=residuals,
        costs=list(range(fact.j + 1)),
        stop_step=_first_below(residuals, eps * residuals[0]),
        algorithm=algorithm,
    )


def mr_run(A: LinearOperator, b: ArrayLike, eps: float, max_steps: int) -> SolveTrace:
    """MR 轨迹：一次 Lanczos 分解，逐步求最小二乘；第 j 步代价为 j"""
    return _galerkin_trace(A, b, eps, max_steps, "mr")


def cg_run(A: LinearOperator, b: ArrayLike, eps: float, max_steps: int) -> SolveTrace:
    """Galerkin/CG 轨迹"""
    return _galerkin_trace(A, b, eps, max_steps, "cg")


def chebyshev_run(
    A: LinearOperator,
    b: ArrayLike,
    params: Union[ChebyshevParams, float],
    eps: float,
    max_steps: int,
    stop_early: bool = True,
) -> SolveTrace:
    """
    谱包含区间 [1-ρ, 1+ρ] 上的 Chebyshev 半迭代

    递推（中心 d = 1，半宽 c = ρ）：
        k = 0: p = r_0,               α = 1/d
        k = 1: β = (cα)²/2
        k ≥ 2: β = (cα/2)²
               α = 1/(d - β/α),       p = r_k + β p
        x_{k+1} = x_k + α p,          r_{k+1} = b - A x_{k+1}
    残差满足 r_j = C_j((I-A)/ρ) b / C_j(1/ρ)。

    Args:
        A: 谱位于 [1-ρ, 1+ρ] 的算子（调用方负责）
        b: 右端项
        params: ρ（ChebyshevParams 或直接给出 ρ）
        eps: 停止容差
        max_steps: 最大步数
        stop_early: 达到容差后是否停止

    Returns:
        SolveTrace: 第 j 个迭代的代价为 j-1

    Raises:
        InvalidInputError: ρ 不在 (0, 1) 内
    """
    rho = params.rho if isinstance(params, ChebyshevParams) else float(params)
    if not 0.0 < rho < 1.0:
        raise InvalidInputError(f"ρ 必须位于 (0, 1)，实际为 {rho}")
    b = as_vector(b)
    d, c = 1.0, rho
    bnorm = float(np.linalg.norm(b))

    x = np.zeros_like(b)
    r = b.copy()
    p = None
    alpha = 0.0
    iterates = [x.copy()]
    residuals = [bnorm]
    stop_step = None

    for k in range(max_steps):
        if k == 0:
            p = r.copy()
            alpha = 1.0 / d
        else:
            beta = 0.5 * (c * alpha) ** 2
            if k > 1:
                beta *= 0.5
            alpha = 1.0 / (d - beta / alpha)
            p = r + beta * p
        x = x + alpha * p
        r = b - A.apply(x)
        iterates.append(x.copy())
        residuals.append(float(np.linalg.norm(r)))
        if stop_step is None and residuals[-1] <= eps * bnorm:
            stop_step = k + 1
            logger.debug(f"Chebyshev 在第 {stop_step} 步达到容差 {eps}")
            if stop_early:
                break

    costs = [0] + [j - 1 for j in range(1, len(iterates))]
    return SolveTrace(
        iterates=iterates,
        residual_norms=np.asarray(residuals),
        costs=costs,
        stop_step=stop_step,
        algorithm="chebyshev",
    )


def chebyshev_residual_polynomial(j: int, rho: float) -> Polynomial:
    """
    Chebyshev 残差多项式 W_j(λ) = C_j((1-λ)/ρ) / C_j(1/ρ)，满足 W_j(0) = 1
    """
    if j < 0:
        raise InvalidInputError(f"多项式次数不能为负: {j}")
    if not 0.0 < rho < 1.0:
        raise InvalidInputError(f"ρ 必须位于 (0, 1)，实际为 {rho}")
    C = Chebyshev.basis(j).convert(kind=Polynomial)
    W = C(Polynomial([1.0 / rho, -1.0 / rho]))
    return W / C(1.0 / rho)


def q_epsilon(eps: float, rho: float) -> int:
    """
    q(ε) = ⌊ln((1+√(1-ε²))/ε) / ln((1+√(1-ρ²))/ρ)⌋，用 50 位十进制精度计算

    Raises:
        InvalidInputError: ε 或 ρ 不在 (0, 1) 内
    """
    if not 0.0 < eps < 1.0:
        raise InvalidInputError(f"ε 必须位于 (0, 1)，实际为 {eps}")
    if not 0.0 < rho < 1.0:
        raise InvalidInputError(f"ρ 必须位于 (0, 1)，实际为 {rho}")
    with localcontext() as ctx:
        ctx.prec = Q_EPSILON_PRECISION
        e = Decimal(eps)
        r = Decimal(rho)
        numerator = ((1 + (1 - e * e).sqrt()) / e).ln()
        denominator = ((1 + (1 - r * r).sqrt()) / r).ln()
        ratio = numerator / denominator
        return int(ratio.to_integral_value(rounding=ROUND_FLOOR))


def generalized_residual(A: LinearOperator, x: ArrayLike, b: ArrayLike, p: float) -> Tuple[float, float]:
    """
    校验用 oracle：‖A^p(x - A^{-1}b)‖ 及参照值 ‖A^{p-1}b‖

    p < 1 时这个量对算法是不可计算的，生产路径从不调用本函数。

    Args:
        A: 带 oracle 视图的算子
        x: 近似解
        b: 右端项
        p: 0、1/2 或 1

    Returns:
        Tuple[float, float]: (残差, 参照值)

    Raises:
        SingularProjectionError: A 奇异
        InvalidInputError: p 非法，或 p = 1/2 而 A 非 SPD
    """
    if p not in (0.0, 0.5, 1.0):
        raise InvalidInputError(f"p 只能取 0、1/2 或 1，实际为 {p}")
    M = A.dense()
    x = as_vector(x)
    b = as_vector(b)
    values, vectors = np.linalg.eigh(M)
    scale = max(np.max(np.abs(values)), np.finfo(float).tiny)
    if np.min(np.abs(values)) <= SINGULAR_TOL * scale:
        raise SingularProjectionError("矩阵奇异，A^{-1}b 不存在")
    if p == 0.5 and values[0] <= 0.0:
        raise InvalidInputError("p = 1/2 需要 SPD 矩阵")

    def power(k: float) -> np.ndarray:
        if k == 0.0:
            return np.ones_like(values)
        if float(k).is_integer():
            return values ** int(k)
        return values ** k

    bc = vectors.T @ b
    error = vectors.T @ x - bc / values
    value = float(np.linalg.norm(power(p) * error))
    reference = float(np.linalg.norm(power(p - 1.0) * bc))
    return value, reference


@dataclass(frozen=True)
class OrderingCheck:
    """
    ‖b - A·MR(N_q)‖ > ‖b - A·Cheb(N_q)‖ > ‖b - A·MR(N_{q+1})‖ 的一次检验
    """

    q: int
    mr_q: float
    cheb_q: float
    mr_q_plus_1: float

    @property
    def holds(self) -> bool:
        return self.mr_q > self.cheb_q > self.mr_q_plus_1


def ordering_check(A: LinearOperator, b: ArrayLike, rho: float, eps: float) -> Optional[OrderingCheck]:
    """
    在给定实例上比较相同信息代价下 MR 与 Chebyshev 的残差

    Returns:
        Optional[OrderingCheck]: q(ε) < 1 或 q+1 > n 时返回 None
    """
    q = q_epsilon(eps, rho)
    if q < 1 or q + 1 > A.n:
        return None
    b = as_vector(b)
    fact = lanczos_factorize(A, b, q + 1)
    if fact.j < q + 1:
        return None
    cheb = chebyshev_run(A, b, ChebyshevParams(rho=rho), eps=0.0, max_steps=q + 1, stop_early=False)
    return OrderingCheck(
        q=q,
        mr_q=mr_residual(fact.leading(q), b),
        cheb_q=float(cheb.residual_norms[q + 1]),
        mr_q_plus_1=mr_residual(fact, b),
    )
