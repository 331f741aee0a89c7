"""
测试共享夹具与 oracle 辅助函数
"""

import numpy as np
import pytest

from krylovlab.core.krylov import LinearOperator
from krylovlab.core.linalg import SymTridiagonal


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 验收规模的实验，耗时较长（-m \"not slow\" 跳过）")


def random_symmetric(rng: np.random.Generator, n: int) -> np.ndarray:
    X = rng.standard_normal((n, n))
    return 0.5 * (X + X.T)


def random_spd(rng: np.random.Generator, n: int, low: float = 0.1, high: float = 2.0) -> np.ndarray:
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    M = (V * rng.uniform(low, high, n)) @ V.T
    return 0.5 * (M + M.T)


def unit_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def sturm_count(T: SymTridiagonal, x: float) -> int:
    """严格小于 x 的特征值个数（Sturm 序列 / LDLᵗ 主元符号）"""
    count = 0
    d = 1.0
    for i in range(T.n):
        off = T.offdiag[i - 1] ** 2 if i > 0 else 0.0
        d = T.diag[i] - x - (off / d if i > 0 else 0.0)
        if d == 0.0:
            d = -1e-300
        if d < 0.0:
            count += 1
    return count


def sturm_eigenvalues(T: SymTridiagonal, tol: float = 1e-13) -> np.ndarray:
    """Gershgorin 区间内逐个二分求特征值"""
    radius = np.zeros(T.n)
    radius[:-1] += np.abs(T.offdiag)
    radius[1:] += np.abs(T.offdiag)
    lo_all = float(np.min(T.diag - radius)) - 1.0
    hi_all = float(np.max(T.diag + radius)) + 1.0
    values = []
    for k in range(T.n):
        lo, hi = lo_all, hi_all
        while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
            mid = 0.5 * (lo + hi)
            if sturm_count(T, mid) > k:
                hi = mid
            else:
                lo = mid
        values.append(0.5 * (lo + hi))
    return np.array(values)


def textbook_cg(A: np.ndarray, b: np.ndarray, steps: int) -> list:
    """教科书 CG，返回 x_0..x_steps"""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    iterates = [x.copy()]
    for _ in range(steps):
        Ap = A @ p
        alpha = (r @ r) / (p @ Ap)
        x = x + alpha * p
        r_new = r - alpha * Ap
        beta = (r_new @ r_new) / (r @ r)
        p = r_new + beta * p
        r = r_new
        iterates.append(x.copy())
    return iterates


def krylov_basis(A: np.ndarray, b: np.ndarray, j: int) -> np.ndarray:
    """K^j 的正交基（对归一化幂次序列做 QR）"""
    cols = [b]
    for _ in range(j - 1):
        v = A @ cols[-1]
        cols.append(v / np.linalg.norm(v))
    Q, _ = np.linalg.qr(np.column_stack(cols))
    return Q


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_spd(rng):
    A = random_spd(rng, 12)
    return A, LinearOperator.from_matrix(A), unit_vector(rng, 12)


@pytest.fixture
def small_symmetric(rng):
    A = random_symmetric(rng, 10)
    return A, LinearOperator.from_matrix(A), unit_vector(rng, 10)
