"""
矩阵与起始向量生成
同一配方和种子总是得到同一结果
"""

import logging

import numpy as np
from scipy.stats import ortho_group

from krylovlab.core.errors import InvalidInputError
from krylovlab.core.linalg import DenseSymmetric, Matrix, SymTridiagonal, Vector, apply, normalize
from krylovlab.models.schemas import MatrixKind, MatrixRecipe, StartKind, StartVectorRecipe

logger = logging.getLogger(__name__)

RANDOM_ENTRY_BOUND = 1.0 / 3.0


def _random_tridiag(recipe: MatrixRecipe, rng: np.random.Generator) -> SymTridiagonal:
    n = recipe.n
    diag = rng.uniform(-RANDOM_ENTRY_BOUND, RANDOM_ENTRY_BOUND, n)
    offdiag = rng.uniform(-RANDOM_ENTRY_BOUND, RANDOM_ENTRY_BOUND, n - 1)
    # 次对角线必须非零，否则矩阵可约
    while np.any(offdiag == 0.0):
        zeros = offdiag == 0.0
        offdiag[zeros] = rng.uniform(-RANDOM_ENTRY_BOUND, RANDOM_ENTRY_BOUND, int(zeros.sum()))
    return SymTridiagonal(recipe.scaling * diag, recipe.scaling * offdiag)


def _scott_like(recipe: MatrixRecipe) -> SymTridiagonal:
    """
    零对角、次对角 √i / (2√n) 的三对角矩阵（缩放后的 Hermite Jacobi 矩阵）

    以 e1 起步时，最后一步之前每个 Ritz 残差都等于 β_1，Rayleigh-Ritz 停滞；
    谱在内部密集聚集。
    """
    n = recipe.n
    i = np.arange(1, n)
    offdiag = recipe.scaling * np.sqrt(i) / (2.0 * np.sqrt(n))
    return SymTridiagonal(np.zeros(n), offdiag)


def _increasing_offdiag(recipe: MatrixRecipe) -> SymTridiagonal:
    """零对角，offdiag[i] = i/n（i = 1..n-1），严格递增"""
    n = recipe.n
    return SymTridiagonal(np.zeros(n), recipe.scaling * np.arange(1, n) / n)


def _ftilde_member(recipe: MatrixRecipe, rng: np.random.Generator) -> DenseSymmetric:
    """
    A = I - B，B 对称且 ‖B‖ = ρ

    B 的特征值包含 ±ρ（端点被取到），其余按 spacing 取随机值或 Chebyshev 极值点，
    再用 Haar 随机正交矩阵旋转。ρ = 0 时精确返回单位矩阵。
    """
    n, rho = recipe.n, recipe.rho
    if rho == 0.0:
        return DenseSymmetric(np.eye(n))
    if recipe.spacing == "chebyshev":
        mu = rho * np.cos(np.pi * np.arange(n) / (n - 1))
    else:
        mu = np.concatenate([[rho, -rho], rng.uniform(-rho, rho, n - 2)])
    V = ortho_group.rvs(n, random_state=rng)
    return DenseSymmetric((V * (1.0 - mu)) @ V.T)


def generate_matrix(recipe: MatrixRecipe) -> Matrix:
    """
    按配方生成矩阵

    Args:
        recipe: 已校验的矩阵配方

    Returns:
        Matrix: 对称三对角或稠密对称矩阵
    """
    rng = np.random.default_rng(recipe.seed)
    kind = recipe.kind
    if kind == MatrixKind.RANDOM_TRIDIAG:
        matrix = _random_tridiag(recipe, rng)
    elif kind == MatrixKind.SCOTT_LIKE:
        matrix = _scott_like(recipe)
    elif kind == MatrixKind.INCREASING_OFFDIAG:
        matrix = _increasing_offdiag(recipe)
    elif kind == MatrixKind.FTILDE_RHO_MEMBER:
        matrix = _ftilde_member(recipe, rng)
    elif kind == MatrixKind.EXPLICIT_FILE:
        from krylovlab.services.io_service import read_matrix

        matrix = read_matrix(recipe.path)
    else:
        raise InvalidInputError(f"不支持的矩阵类型: {kind}")
    logger.debug(f"生成矩阵 {recipe.label()}")
    return matrix


def generate_start_vector(A: Matrix, recipe: StartVectorRecipe) -> Vector:
    """
    按配方生成单位起始向量

    - e1: 第一个坐标向量
    - random_unit: 归一化的高斯随机向量
    - A_times_random: 归一化的 A·r（r 为高斯随机向量）
    - extremal: 最小、最大特征值对应特征向量的等权组合

    Raises:
        InvalidInputError: A·r 为零向量等无法归一化的情形
    """
    n = A.n
    rng = np.random.default_rng(recipe.seed)
    kind = recipe.kind
    if kind == StartKind.E1:
        b = np.zeros(n)
        b[0] = 1.0
        return b
    if kind == StartKind.RANDOM_UNIT:
        return normalize(rng.standard_normal(n))
    if kind == StartKind.A_TIMES_RANDOM:
        r = rng.standard_normal(n)
        return normalize(apply(A, r))
    if kind == StartKind.EXTREMAL:
        _, vectors = np.linalg.eigh(A.to_dense())
        if n == 1:
            return vectors[:, 0] / np.linalg.norm(vectors[:, 0])
        return normalize(vectors[:, 0] + vectors[:, -1])
    raise InvalidInputError(f"不支持的起始向量类型: {kind}")
