"""
不可区分性构造

对 Krylov 信息 N_j(A,b) 相同的矩阵集合 V̂(N_j) 给出具体的见证：
特殊正交基下的分块形式、任意补全、把残差推到任意大的 SPD 对手矩阵、
反射孪生矩阵以及投影引理的逐例校验。所有证书都可以仅凭其原始数据重新校验。
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import null_space
from scipy.optimize import minimize

from krylovlab.core.errors import (
    BreakdownError,
    CertificateError,
    DimensionMismatchError,
    InvalidInputError,
    NoAdversaryError,
)
from krylovlab.core.krylov import LinearOperator, arnoldi, krylov_info, lanczos_factorize
from krylovlab.core.linalg import (
    DenseSymmetric,
    Reflector,
    SymTridiagonal,
    Vector,
    as_vector,
    make_reflector,
    normalize,
    sym_tridiag_eigen,
)
from krylovlab.models.schemas import LemmaVerdict
from krylovlab.services.eigen_solvers import gmr_residual_for_start

logger = logging.getLogger(__name__)

FORM_TOL = 1e-10
POWER_AGREEMENT_TOL = 1e-9
RESIDUAL_TOL = 1e-10
ORTHOGONAL_PART_TOL = 1e-8
TWIN_PART_TOL = 1e-12
SEARCH_GRID_POINTS = 16


def _max_step_error(M: NDArray[np.float64], powers: NDArray[np.float64], degree: int) -> float:
    """
    max_{1≤i≤degree} ‖M p_{i-1} - p_i‖ / max(1, ‖p_i‖, ‖M‖·‖p_{i-1}‖)，p_i = powers[i] = A^i b

    对 i ≤ degree 逐步成立 M p_{i-1} = p_i 等价于 M^i b = A^i b。
    逐步比较不会把误差按 ‖M‖^i 放大，所以归一化只需 ‖M‖ 一次方。
    """
    worst = 0.0
    norm_M = float(np.linalg.norm(M, 2)) if degree > 0 else 1.0
    for i in range(1, degree + 1):
        prev, ref = powers[i - 1], powers[i]
        scale = max(1.0, float(np.linalg.norm(ref)), norm_M * float(np.linalg.norm(prev)))
        worst = max(worst, float(np.linalg.norm(M @ prev - ref)) / scale)
    return worst


@dataclass(frozen=True)
class DistinguishedForm:
    """
    特殊正交基下 A = [[T, Eᵗ], [E, U]]

    basis 的前 j 列张成 K^j，第 j+1 列是 q_{j+1}；E 只有右上角元素 β 非零。
    T 与 β 由 N_j(A,b) 唯一确定，U 是自由块。

    Args:
        T: j×j 三对角块
        beta: β_j ≠ 0
        basis: n×n 正交矩阵
        U: 原矩阵的 (n-j)×(n-j) 自由块
        powers: A^i b（i = 0..j），用于校验补全
    """

    T: SymTridiagonal
    beta: float
    basis: NDArray[np.float64]
    U: NDArray[np.float64]
    powers: NDArray[np.float64]

    @property
    def j(self) -> int:
        return self.T.n

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def b(self) -> Vector:
        return self.powers[0]

    def coupling(self) -> NDArray[np.float64]:
        """(n-j)×j 块 E"""
        E = np.zeros((self.n - self.j, self.j))
        E[0, self.j - 1] = self.beta
        return E

    def block_matrix(self, U_block: ArrayLike) -> NDArray[np.float64]:
        E = self.coupling()
        return np.block([[self.T.to_dense(), E.T], [E, np.asarray(U_block, dtype=np.float64)]])


@dataclass(frozen=True)
class AdversaryCertificate:
    """
    对手矩阵证书：Ã ∈ V̂(N_j(A,b))、Ã 正定且 ‖b - Ãv‖ = residual
    """

    A_tilde: DenseSymmetric
    v: Vector
    residual: float
    indist_degree: int
    b: Vector
    powers: NDArray[np.float64]
    scale: float = 0.0

    def verify(self) -> List[str]:
        """
        仅凭原始数据重新校验

        Returns:
            List[str]: 未通过的不变量名称，空列表表示通过
        """
        failures = []
        M = self.A_tilde.entries
        if _max_step_error(M, self.powers, self.indist_degree) > POWER_AGREEMENT_TOL:
            failures.append("indistinguishable")
        recomputed = float(np.linalg.norm(self.b - M @ self.v))
        if abs(recomputed - self.residual) > RESIDUAL_TOL * max(1.0, self.residual):
            failures.append("residual")
        if np.linalg.eigvalsh(M)[0] <= 0.0:
            failures.append("spd")
        return failures


@dataclass(frozen=True)
class TwinCertificate:
    """
    反射孪生证书：Â = HAH，H 固定 K^{j+1}，y = z + w

    H 为 None 表示 w = 0，此时 Â = A。
    norms 依次为 (‖b - Ây‖, ‖b - Ay‖, ‖b - Az‖)。
    """

    H: Optional[Reflector]
    A: DenseSymmetric
    A_hat: DenseSymmetric
    b: Vector
    j: int
    y: Vector
    z: Vector
    w: Vector
    norms: Tuple[float, float, float]

    def verify(self) -> List[str]:
        failures = []
        A = self.A.entries
        expected = A if self.H is None else self.H.conjugate(A)
        if np.max(np.abs(expected - self.A_hat.entries)) > FORM_TOL * max(1.0, self.A.norm2()):
            failures.append("reflection")
        powers = [self.b]
        for _ in range(self.j):
            powers.append(A @ powers[-1])
        if _max_step_error(self.A_hat.entries, np.vstack(powers), self.j) > POWER_AGREEMENT_TOL:
            failures.append("indistinguishable")
        lhs = np.linalg.norm(self.A_hat.entries @ self.y - self.b)
        rhs = np.linalg.norm(A @ self.z - self.b - A @ self.w)
        if abs(lhs - rhs) > RESIDUAL_TOL * max(1.0, lhs):
            failures.append("norm_identity")
        recomputed = (
            float(np.linalg.norm(self.b - self.A_hat.entries @ self.y)),
            float(np.linalg.norm(self.b - A @ self.y)),
            float(np.linalg.norm(self.b - A @ self.z)),
        )
        if any(abs(a - c) > RESIDUAL_TOL * max(1.0, c) for a, c in zip(self.norms, recomputed)):
            failures.append("norms")
        return failures


def _apply_columns(A: LinearOperator, columns: NDArray[np.float64]) -> NDArray[np.float64]:
    if A.oracle_view is not None:
        return A.oracle_view.entries @ columns
    return np.column_stack([A.apply(columns[:, i]) for i in range(columns.shape[1])])


def distinguished_form(A: LinearOperator, b: ArrayLike, j: int) -> DistinguishedForm:
    """
    构造 K^j 的特殊正交基以及 A 在其下的分块形式

    Args:
        A: 对称算子
        b: 单位起始向量
        j: 不可区分度，1 ≤ j < n

    Returns:
        DistinguishedForm: 分块形式

    Raises:
        BreakdownError: 第 j 步或之前 breakdown，dim K^j < j 或 β_j = 0
    """
    fact = lanczos_factorize(A, b, j)
    if fact.breakdown:
        raise BreakdownError(f"Lanczos 在第 {fact.j} 步 breakdown，不存在第 {j} 步的特殊基")
    info = krylov_info(A, b, j)

    head = fact.extended_basis()
    basis = np.column_stack([head, null_space(head.T)])
    tail = basis[:, j:]
    U = tail.T @ _apply_columns(A, tail)
    U = 0.5 * (U + U.T)
    logger.debug(f"特殊基: n = {A.n}, j = {j}, β = {fact.beta_next:.6e}")
    return DistinguishedForm(T=fact.T, beta=fact.beta_next, basis=basis, U=U, powers=info.powers)


def complete_with(df: DistinguishedForm, U_tilde: ArrayLike) -> DenseSymmetric:
    """
    用任意对称块 Ũ 补全，得到 Ã ∈ V̂(N_j(A,b))

    Raises:
        DimensionMismatchError: Ũ 不是 (n-j)×(n-j)
        InvalidInputError: Ũ 不对称
        CertificateError: 补全后的 Krylov 序列与 A 不一致
    """
    U_tilde = np.asarray(U_tilde, dtype=np.float64)
    m = df.n - df.j
    if U_tilde.shape != (m, m):
        raise DimensionMismatchError(f"Ũ 形状应为 ({m}, {m})，实际为 {U_tilde.shape}")
    if np.max(np.abs(U_tilde - U_tilde.T)) > FORM_TOL * max(1.0, float(np.max(np.abs(U_tilde)))):
        raise InvalidInputError("Ũ 必须对称")

    M = df.block_matrix(U_tilde)
    A_tilde = df.basis @ M @ df.basis.T
    A_tilde = DenseSymmetric(0.5 * (A_tilde + A_tilde.T))

    error = _max_step_error(A_tilde.entries, df.powers, df.j)
    if error > POWER_AGREEMENT_TOL:
        raise CertificateError(f"补全矩阵与 A 可区分，最大相对误差 {error:.3e}")
    return A_tilde


def _split(df: DistinguishedForm, v: ArrayLike) -> Tuple[Vector, Vector]:
    v = as_vector(v)
    if v.size != df.n:
        raise DimensionMismatchError(f"v 的维度 {v.size} 与 n = {df.n} 不一致")
    c = df.basis.T @ v
    return c[: df.j], c[df.j :]


def _head_residual(df: DistinguishedForm, f: Vector, g: Vector) -> float:
    """‖e_1 - T f - Eᵗ g‖"""
    top = -df.T.to_dense() @ f
    top[0] += 1.0
    top[-1] -= df.beta * g[0]
    return float(np.linalg.norm(top))


def blowup_residual(df: DistinguishedForm, v: ArrayLike, t: float) -> float:
    """
    Ũ = tI 时 ‖b - Ãv‖ 的闭式值，不构造 Ã

    ‖b - Ãv‖² = ‖e_1 - Tf - Eᵗg‖² + ‖β f_j e_1 + t g‖²，f、g 为 v 在特殊基下的前后两段坐标
    """
    f, g = _split(df, v)
    tail = t * g
    tail[0] += df.beta * f[-1]
    return float(np.hypot(_head_residual(df, f, g), np.linalg.norm(tail)))


def adversarial_blowup(df: DistinguishedForm, v: ArrayLike, target: float) -> AdversaryCertificate:
    """
    构造 SPD 对手 Ã ∈ V̂(N_j(A,b))，使 ‖b - Ãv‖ > target

    取 Ũ = tI。t 同时满足：
      - 尾部 ‖β f_j e_1 + t g‖ 足够大（关于 t 的二次不等式）
      - t > β²(T⁻¹)_{jj} + λ_min(T)，Schur 补因而正定

    Args:
        df: 特殊基分块形式（A 需在 K^j 上正定）
        v: 任意向量
        target: 残差下界

    Returns:
        AdversaryCertificate: 已通过自校验的证书

    Raises:
        NoAdversaryError: v ∈ K^j，此时所有不可区分矩阵对 v 的作用相同
        InvalidInputError: T_j 不正定
        CertificateError: 证书自校验失败
    """
    f, g = _split(df, v)
    g_norm = float(np.linalg.norm(g))
    if g_norm <= ORTHOGONAL_PART_TOL:
        raise NoAdversaryError(f"v 与 K^{df.j} 的正交分量范数 {g_norm:.3e} 过小，不存在对手")

    eig = sym_tridiag_eigen(df.T)
    if eig.values[0] <= 0.0:
        raise InvalidInputError(f"T_{df.j} 不正定（λ_min = {eig.values[0]:.3e}），无法构造 SPD 对手")
    tinv_last = float(np.sum(eig.vectors[-1, :] ** 2 / eig.values))
    t_spd = df.beta**2 * tinv_last + eig.values[0]

    # ‖g‖² t² + 2 β f_j g_0 t + β² f_j² > goal² - head²
    goal = target * (1.0 + 1e-6) + 1e-12
    need = goal**2 - _head_residual(df, f, g) ** 2
    a = g_norm**2
    half_b = df.beta * f[-1] * g[0]
    c = (df.beta * f[-1]) ** 2 - need
    disc = half_b**2 - a * c
    t_goal = (-half_b + np.sqrt(disc)) / a if disc > 0.0 else 0.0
    t = max(float(t_goal), t_spd)

    A_tilde = complete_with(df, t * np.eye(df.n - df.j))
    v = as_vector(v)
    residual = float(np.linalg.norm(df.b - A_tilde.entries @ v))
    cert = AdversaryCertificate(
        A_tilde=A_tilde,
        v=v,
        residual=residual,
        indist_degree=df.j,
        b=df.b,
        powers=df.powers,
        scale=t,
    )
    failures = cert.verify()
    if residual <= target:
        failures.append("target")
    if failures:
        raise CertificateError(f"对手证书校验失败: {', '.join(failures)}")
    logger.debug(f"对手构造完成: j = {df.j}, t = {t:.3e}, 残差 = {residual:.6e}")
    return cert


def reflect_twin(A: LinearOperator, b: ArrayLike, j: int, y: ArrayLike) -> TwinCertificate:
    """
    反射孪生 Â = HAH

    z 为 y 在 K^{j+1} 上的正交投影，w = y - z，H 是反转 w 的 Householder 反射。
    H 固定 K^{j+1}，因此 Â^i b = A^i b（i ≤ j）。

    Args:
        A: 带 oracle 视图的对称算子
        b: 单位起始向量
        j: 不可区分度，j + 1 ≤ n
        y: 任意向量

    Returns:
        TwinCertificate: 孪生证书
    """
    if j + 1 > A.n:
        raise InvalidInputError(f"需要 j + 1 ≤ n，实际 j = {j}, n = {A.n}")
    y = as_vector(y)
    if y.size != A.n:
        raise DimensionMismatchError(f"y 的维度 {y.size} 与 n = {A.n} 不一致")
    b = as_vector(b)

    Q = lanczos_factorize(A, b, j + 1).Q
    z = Q @ (Q.T @ y)
    w = y - z
    dense = A.oracle_view if A.oracle_view is not None else DenseSymmetric(A.dense())
    if np.linalg.norm(w) <= TWIN_PART_TOL * max(1.0, np.linalg.norm(y)):
        H = None
        A_hat = dense
    else:
        H = make_reflector(w)
        A_hat = DenseSymmetric(H.conjugate(dense.entries))

    M = dense.entries
    norms = (
        float(np.linalg.norm(b - A_hat.entries @ y)),
        float(np.linalg.norm(b - M @ y)),
        float(np.linalg.norm(b - M @ z)),
    )
    return TwinCertificate(H=H, A=dense, A_hat=A_hat, b=b, j=j, y=y, z=z, w=w, norms=norms)


def _random_symmetric(rng: np.random.Generator, m: int) -> NDArray[np.float64]:
    X = rng.standard_normal((m, m))
    return 0.5 * (X + X.T)


def _completion_agrees(
    A: LinearOperator, b: Vector, degree: int, z: Vector, rng: np.random.Generator
) -> Optional[bool]:
    """随机补全 Ã ∈ V̂(N_degree) 是否满足 Ãz = Az；breakdown 或 degree ≥ n 时返回 None"""
    if degree >= A.n:
        return None
    try:
        df = distinguished_form(A, b, degree)
    except BreakdownError:
        return None
    A_tilde = complete_with(df, _random_symmetric(rng, df.n - df.j))
    Az = A.dense() @ z
    diff = np.linalg.norm(A_tilde.entries @ z - Az)
    return bool(diff <= POWER_AGREEMENT_TOL * max(1.0, np.linalg.norm(Az)))


def projection_lemma_check(
    A: LinearOperator, b: ArrayLike, j: int, eps: float, y: ArrayLike, seed: int = 0
) -> LemmaVerdict:
    """
    投影引理的单例校验

    若 ‖b - Ay‖ ≤ ε‖b‖ 且 ‖b - Ây‖ ≤ ε‖b‖，则 y 在 K^{j+1} 上的投影 z
    满足 ‖b - Az‖ ≤ ε‖b‖。假设不成立时如实报告，不算失败。

    另外记录两项一致性：次数 j+1 的随机补全在 z 上与 A 一致（应当成立），
    次数 j 的随机补全是否一致（仅记录）。
    """
    b = as_vector(b)
    twin = reflect_twin(A, b, j, y)
    b_norm = float(np.linalg.norm(b))
    residual_twin, residual_y, residual_z = twin.norms
    hypothesis = residual_y <= eps * b_norm and residual_twin <= eps * b_norm
    if not hypothesis:
        logger.debug(f"假设不成立: ‖b-Ay‖ = {residual_y:.3e}, ‖b-Ây‖ = {residual_twin:.3e}, ε = {eps}")

    rng = np.random.default_rng(seed)
    return LemmaVerdict(
        n=A.n,
        j=j,
        epsilon=eps,
        residual_y=residual_y,
        residual_twin=residual_twin,
        residual_z=residual_z,
        hypothesis_holds=hypothesis,
        conclusion_holds=residual_z <= eps * b_norm + RESIDUAL_TOL,
        norm_identity_holds="norm_identity" not in twin.verify(),
        agreement_next_degree=_completion_agrees(A, b, j + 1, twin.z, rng),
        agreement_same_degree=_completion_agrees(A, b, j, twin.z, rng),
    )


def _structured_starts(A: DenseSymmetric, j: int) -> List[Vector]:
    """均匀分布在谱上的 j+1 个特征向量的等权组合，以及全部特征向量的等权组合"""
    values, vectors = np.linalg.eigh(A.entries)
    n = values.size
    picks = np.unique(np.round(np.linspace(0, n - 1, min(j + 1, n))).astype(int))
    return [normalize(vectors[:, picks].sum(axis=1)), normalize(vectors.sum(axis=1))]


def worst_start_search(
    A: DenseSymmetric, j: int, budget: int, seed: int = 0
) -> Tuple[Vector, float]:
    """
    搜索使第 j 步 GMR 残差最大的起始向量（启发式）

    结构化初值加 budget 个随机初值，各自用 Nelder-Mead 局部上升。
    结果应落在 [‖A‖/(2j), ‖A‖/j] 附近，下界只是证据而非证明。

    Args:
        A: 小规模稠密对称矩阵（n ≤ 12 时结果可信）
        j: Krylov 步数
        budget: 随机重启次数
        seed: 随机种子

    Returns:
        Tuple[Vector, float]: (b*, 第 j 步 GMR 残差)
    """
    if j < 1:
        raise InvalidInputError(f"步数必须至少为 1，实际为 {j}")
    n = A.n
    rng = np.random.default_rng(seed)
    if j >= n:
        return normalize(rng.standard_normal(n)), 0.0

    op = LinearOperator.from_matrix(A)

    def value(x: NDArray[np.float64]) -> float:
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            return 0.0
        return gmr_residual_for_start(op, x / nrm, j, grid_points=SEARCH_GRID_POINTS)

    starts = _structured_starts(A, j) + [normalize(rng.standard_normal(n)) for _ in range(budget)]
    best_b, best_value = starts[0], value(starts[0])
    for x0 in starts:
        res = minimize(lambda x: -value(x), x0, method="Nelder-Mead", options={"maxfev": 40 * n, "xatol": 1e-6})
        for candidate in (x0, res.x):
            if np.linalg.norm(candidate) == 0.0:
                continue
            candidate = normalize(candidate)
            current = value(candidate)
            if current > best_value:
                best_b, best_value = candidate, current

    logger.info(f"最坏起始向量搜索: n = {n}, j = {j}, 残差 = {best_value:.6e}, ‖A‖/j = {A.norm2() / j:.6e}")
    return best_b, float(best_value)


@dataclass(frozen=True)
class HessenbergForm:
    """
    非对称矩阵的特殊基形式 [[H_j, R], [E, U]]

    H_j 为上 Hessenberg，E 只有右上角元素 h_{j+1,j} 非零。
    """

    H: NDArray[np.float64]
    h_next: float
    basis: NDArray[np.float64]
    transformed: NDArray[np.float64] = field(repr=False)

    @property
    def j(self) -> int:
        return self.H.shape[0]

    def coupling_defect(self) -> float:
        """左下块中除 (0, j-1) 之外元素的最大绝对值"""
        lower = np.array(self.transformed[self.j :, : self.j])
        lower[0, self.j - 1] = 0.0
        return float(np.max(np.abs(lower))) if lower.size else 0.0


def distinguished_form_nonsymmetric(A: ArrayLike, b: ArrayLike, j: int) -> HessenbergForm:
    """
    非对称情形的特殊基（Arnoldi），只用于稠密校验

    Raises:
        BreakdownError: Arnoldi 在第 j 步之前 breakdown
    """
    M = np.asarray(A, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"需要方阵，实际形状: {M.shape}")
    if j >= M.shape[0]:
        raise InvalidInputError(f"需要 j < n，实际 j = {j}, n = {M.shape[0]}")
    Q, H_bar = arnoldi(M, b, j)
    if Q.shape[1] < j + 1:
        raise BreakdownError(f"Arnoldi 在第 {Q.shape[1]} 步 breakdown")
    basis = np.column_stack([Q, null_space(Q.T)])
    return HessenbergForm(
        H=H_bar[:j, :],
        h_next=float(H_bar[j, j - 1]),
        basis=basis,
        transformed=basis.T @ M @ basis,
    )
