"""
特征对近似：Rayleigh-Ritz / Lanczos、最小残差 Ritz 对的选择，以及 GMR 算法

GMR 在整个 K^j 上极小化 ‖Ax - xρ‖（‖x‖ = 1），而不仅是在 Ritz 向量中挑选。
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import brentq, minimize_scalar

from krylovlab.core.errors import InvalidInputError
from krylovlab.core.krylov import LanczosFactorization, LinearOperator, lanczos_factorize
from krylovlab.core.linalg import Vector, as_vector, sym_tridiag_eigen

logger = logging.getLogger(__name__)

GMR_GRID_POINTS = 64
GMR_REFINE_CANDIDATES = 4
GMR_XTOL = 1e-12
ROOT_GAP_TOL = 1e-15


@dataclass(frozen=True)
class RitzPair:
    theta: float
    z: Optional[Vector]
    residual_norm: float


@dataclass(frozen=True)
class RitzSet:
    """
    第 j 步的全部 Ritz 对，θ 严格升序（非 breakdown 时）

    Args:
        pairs: Ritz 对
        step: 步数 j
        exact: 分解发生 breakdown，Ritz 对是精确特征对
    """

    pairs: Tuple[RitzPair, ...]
    step: int
    exact: bool = False

    @property
    def thetas(self) -> np.ndarray:
        return np.array([p.theta for p in self.pairs])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([p.residual_norm for p in self.pairs])


@dataclass(frozen=True)
class GMRResult:
    x: Vector
    rho: float
    residual: float


@dataclass(frozen=True)
class EigRunTrace:
    """
    GMR 与 Lanczos（最小 Rayleigh-Ritz 残差）的逐步残差历史

    下标 j-1 对应第 j 步；stops 中未达到的容差记为 None。
    """

    lanczos_residuals: np.ndarray
    gmr_residuals: np.ndarray
    gmr_rhos: np.ndarray
    eps: Tuple[float, ...]
    lanczos_stops: Dict[float, Optional[int]]
    gmr_stops: Dict[float, Optional[int]]

    @property
    def steps(self) -> int:
        return self.gmr_residuals.size


def ritz_values(fact: LanczosFactorization) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Ritz 值、残差 β_j|g_i[j]| 以及 Ritz 向量末分量，不构造 z

    Returns:
        Tuple[ndarray, ndarray, ndarray]: (θ, 残差, 末分量 s)
    """
    eig = sym_tridiag_eigen(fact.T)
    s = eig.vectors[-1, :]
    return eig.values, fact.beta_next * np.abs(s), s


def rayleigh_ritz(fact: LanczosFactorization, with_vectors: bool = True) -> RitzSet:
    """
    Rayleigh-Ritz 近似

    z_i = Q g_i，残差用 ‖A z_i - z_i θ_i‖ = β_j |g_i 的末分量|。

    Args:
        fact: 第 j 步 Lanczos 分解
        with_vectors: 是否构造 Ritz 向量

    Returns:
        RitzSet: 全部 j 个 Ritz 对
    """
    eig = sym_tridiag_eigen(fact.T)
    residuals = fact.beta_next * np.abs(eig.vectors[-1, :])
    Z = fact.Q @ eig.vectors if with_vectors else None
    pairs = tuple(
        RitzPair(
            theta=float(eig.values[i]),
            z=Z[:, i] if Z is not None else None,
            residual_norm=float(residuals[i]),
        )
        for i in range(fact.j)
    )
    return RitzSet(pairs=pairs, step=fact.j, exact=fact.breakdown)


def min_residual_pair(rs: RitzSet) -> RitzPair:
    """残差最小的 Ritz 对；残差相同时取 θ 较小者"""
    if not rs.pairs:
        raise InvalidInputError("Ritz 集合为空")
    return min(rs.pairs, key=lambda p: (p.residual_norm, p.theta))


def _shifted_min_eig(d: np.ndarray, w: np.ndarray) -> float:
    """
    λ_min(diag(d) + uuᵗ)，其中 u_i² = w_i ≥ 0，由久期方程求根

    1 + Σ w_i/(d_i - λ) = 0 的最小根落在 (d_(1), d_(2)) 内。
    """
    order = np.argsort(d)
    d = d[order]
    w = w[order]
    deflated = w <= 0.0
    best_deflated = float(d[deflated][0]) if np.any(deflated) else np.inf
    d = d[~deflated]
    w = w[~deflated]
    if d.size == 0:
        return best_deflated

    lo = d[0]
    hi = d[0] + w.sum()
    if d.size > 1:
        hi = min(hi, d[1])
    scale = max(abs(d[-1]), w.sum(), np.finfo(float).tiny)
    gap = hi - lo
    if gap <= ROOT_GAP_TOL * scale:
        return float(min(lo, best_deflated))

    def secular(lam: float) -> float:
        return 1.0 + float(np.sum(w / (d - lam)))

    a = lo + gap * 1e-14
    b = hi - gap * 1e-14
    if secular(a) >= 0.0:
        root = 0.5 * (lo + a)
    elif secular(b) <= 0.0:
        root = hi
    else:
        root = brentq(secular, a, b, xtol=ROOT_GAP_TOL * scale, rtol=4 * np.finfo(float).eps)
    return float(min(root, best_deflated))


class _GMRObjective:
    """固定 ρ 时 σ_min(B̄ - ρĒ)，在 Ritz 基下化为对角加秩一"""

    def __init__(self, thetas: np.ndarray, s: np.ndarray, beta: float):
        self.thetas = thetas
        self.w = (beta * s) ** 2

    def __call__(self, rho: float) -> float:
        lam = _shifted_min_eig((self.thetas - rho) ** 2, self.w)
        return float(np.sqrt(max(lam, 0.0)))


def gmr_eigenpair(
    fact: LanczosFactorization, hints: Sequence[float] = (), grid_points: int = GMR_GRID_POINTS
) -> GMRResult:
    """
    GMR：在 K^j 的单位球面 × R 上极小化 ‖Ax - xρ‖

    先在 Ritz 值、[θ_1 - β, θ_j + β] 上的均匀网格以及调用方给出的提示点
    （例如上一步的 ρ）处扫描，再对最好的几个候选做有界 Brent 细化；
    最后取 σ_min 的右奇异向量 y，x = Q y，ρ 取 x 的 Rayleigh 商。

    Args:
        fact: 第 j 步 Lanczos 分解
        hints: 额外的候选 ρ

    Returns:
        GMRResult: 单位 x ∈ K^j、实数 ρ 与残差
    """
    thetas, ritz_res, s = ritz_values(fact)
    best_ritz = int(np.lexsort((thetas, ritz_res))[0])
    ritz_pair = GMRResult(
        x=fact.Q @ sym_tridiag_eigen(fact.T).vectors[:, best_ritz],
        rho=float(thetas[best_ritz]),
        residual=float(ritz_res[best_ritz]),
    )
    beta = fact.beta_next
    if fact.breakdown or beta == 0.0 or ritz_pair.residual == 0.0:
        return ritz_pair

    objective = _GMRObjective(thetas, s, beta)
    grid = np.linspace(thetas[0] - beta, thetas[-1] + beta, grid_points)
    candidates = np.unique(np.concatenate([thetas, grid, np.asarray(list(hints), dtype=float)]))
    values = np.array([objective(r) for r in candidates])

    best_rho = float(candidates[np.argmin(values)])
    best_val = float(values.min())
    for idx in np.argsort(values)[:GMR_REFINE_CANDIDATES]:
        left = candidates[idx - 1] if idx > 0 else candidates[idx] - beta
        right = candidates[idx + 1] if idx + 1 < candidates.size else candidates[idx] + beta
        res = minimize_scalar(objective, bounds=(left, right), method="bounded", options={"xatol": GMR_XTOL})
        if res.fun < best_val:
            best_rho, best_val = float(res.x), float(res.fun)

    B = fact.projected_matrix()
    E = np.vstack([np.eye(fact.j), np.zeros((1, fact.j))])
    _, _, vt = np.linalg.svd(B - best_rho * E)
    y = vt[-1]
    y = y / np.linalg.norm(y)
    rho = float(y @ (B[: fact.j] @ y))
    residual = float(np.linalg.norm((B - rho * E) @ y))

    if residual > ritz_pair.residual:
        return ritz_pair
    return GMRResult(x=fact.Q @ y, rho=rho, residual=residual)


def count_good_ritz(
    fact: LanczosFactorization, steps: Sequence[int], eps: float, eigenvalues: ArrayLike
) -> List[int]:
    """
    每一步“好 Ritz 值”的个数

    好 Ritz 值：残差 ≤ ε，且 θ 与某个尚未匹配的真实特征值相距 ≤ ε。
    匹配按残差升序贪心进行，每个 Ritz 值取最近的未匹配特征值（一对一）。

    Args:
        fact: 至少 max(steps) 步的 Lanczos 分解
        steps: 需要统计的步数
        eps: 容差
        eigenvalues: 真实谱（dense oracle）

    Returns:
        List[int]: 与 steps 对应的计数
    """
    spectrum = np.sort(as_vector(eigenvalues))
    counts = []
    for j in steps:
        thetas, residuals, _ = ritz_values(fact.leading(min(j, fact.j)))
        matched = np.zeros(spectrum.size, dtype=bool)
        count = 0
        for i in np.argsort(residuals, kind="stable"):
            if residuals[i] > eps:
                break
            distance = np.where(matched, np.inf, np.abs(spectrum - thetas[i]))
            k = int(np.argmin(distance))
            if distance[k] <= eps:
                matched[k] = True
                count += 1
        counts.append(count)
    return counts


def _stops(residuals: np.ndarray, eps: Sequence[float]) -> Dict[float, Optional[int]]:
    stops = {}
    for e in eps:
        hits = np.nonzero(residuals <= e)[0]
        stops[e] = int(hits[0]) + 1 if hits.size else None
    return stops


def eig_race(A: LinearOperator, b: ArrayLike, eps: Sequence[float], max_steps: int) -> EigRunTrace:
    """
    GMR 与 Lanczos 的比赛：逐步记录 r^L_j 与 r^G_j 以及各容差的停止步

    上一步的 GMR ρ 作为下一步的候选点，保证残差历史单调。

    Args:
        A: 隐藏算子
        b: 单位起始向量
        eps: 容差列表
        max_steps: 最大步数（不超过 n）

    Returns:
        EigRunTrace: 两条残差历史
    """
    b = as_vector(b)
    fact = lanczos_factorize(A, b, min(max_steps, A.n))
    lanczos_res, gmr_res, rhos = [], [], []
    prev_rho: List[float] = []
    for j in range(1, fact.j + 1):
        step = fact.leading(j)
        _, residuals, _ = ritz_values(step)
        gmr = gmr_eigenpair(step, hints=prev_rho)
        lanczos_res.append(float(residuals.min()))
        gmr_res.append(gmr.residual)
        rhos.append(gmr.rho)
        prev_rho = [gmr.rho]
        logger.debug(f"第 {j} 步: r^L = {lanczos_res[-1]:.3e}, r^G = {gmr.residual:.3e}")

    lanczos_res = np.asarray(lanczos_res)
    gmr_res = np.asarray(gmr_res)
    eps = tuple(float(e) for e in eps)
    return EigRunTrace(
        lanczos_residuals=lanczos_res,
        gmr_residuals=gmr_res,
        gmr_rhos=np.asarray(rhos),
        eps=eps,
        lanczos_stops=_stops(lanczos_res, eps),
        gmr_stops=_stops(gmr_res, eps),
    )


def gmr_residual_for_start(
    A: LinearOperator, b: ArrayLike, j: int, grid_points: int = GMR_GRID_POINTS
) -> float:
    """起始向量 b 下第 j 步的 GMR 残差（breakdown 时为 0）"""
    fact = lanczos_factorize(A, b, j)
    if fact.breakdown:
        return 0.0
    return gmr_eigenpair(fact, grid_points=grid_points).residual
