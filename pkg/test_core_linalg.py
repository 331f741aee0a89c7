import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st
from numpy.testing import assert_allclose

from conftest import random_symmetric, sturm_eigenvalues
from krylovlab.core.errors import DimensionMismatchError, InvalidInputError
from krylovlab.core.linalg import (
    DenseSymmetric,
    SymTridiagonal,
    apply,
    make_reflector,
    normalize,
    orthonormalize,
    sym_tridiag_eigen,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def naive_matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    out = np.zeros(n)
    for i in range(n):
        for k in range(n):
            out[i] += M[i, k] * v[k]
    return out


def random_tridiag(rng, n):
    return SymTridiagonal(rng.uniform(-1, 1, n), rng.uniform(-1, 1, n - 1))


class TestMatrices:
    def test_dense_rejects_nonsymmetric(self):
        with pytest.raises(InvalidInputError):
            DenseSymmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_dense_rejects_nonsquare(self):
        with pytest.raises(DimensionMismatchError):
            DenseSymmetric(np.ones((2, 3)))

    def test_dense_is_read_only(self):
        A = DenseSymmetric(np.eye(3))
        with pytest.raises(ValueError):
            A.entries[0, 0] = 5.0

    def test_tridiag_offdiag_length(self):
        with pytest.raises(DimensionMismatchError):
            SymTridiagonal(np.zeros(3), np.zeros(3))

    def test_leading_block(self):
        T = SymTridiagonal([1.0, 2.0, 3.0, 4.0], [0.5, 0.6, 0.7])
        L = T.leading(2)
        assert_allclose(L.to_dense(), [[1.0, 0.5], [0.5, 2.0]])

    @hsettings(max_examples=25, deadline=None)
    @given(seed=seeds, n=st.integers(min_value=1, max_value=9))
    def test_apply_matches_naive_loop(self, seed, n):
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(n)
        if n > 1:
            T = random_tridiag(rng, n)
            assert_allclose(apply(T, v), naive_matvec(T.to_dense(), v), atol=1e-13)
        M = random_symmetric(rng, n)
        assert_allclose(apply(DenseSymmetric(M), v), naive_matvec(M, v), atol=1e-12)

    def test_apply_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            apply(DenseSymmetric(np.eye(3)), np.ones(4))


class TestTridiagonalEigen:
    @hsettings(max_examples=20, deadline=None)
    @given(seed=seeds, n=st.integers(min_value=2, max_value=12))
    def test_values_match_sturm_bisection(self, seed, n):
        T = random_tridiag(np.random.default_rng(seed), n)
        eig = sym_tridiag_eigen(T)
        assert_allclose(eig.values, sturm_eigenvalues(T), atol=1e-10)
        assert np.all(np.diff(eig.values) >= 0.0)

    @hsettings(max_examples=20, deadline=None)
    @given(seed=seeds, n=st.integers(min_value=2, max_value=12))
    def test_vectors_orthonormal_and_reconstruct(self, seed, n):
        T = random_tridiag(np.random.default_rng(seed), n)
        eig = sym_tridiag_eigen(T)
        assert_allclose(eig.vectors.T @ eig.vectors, np.eye(n), atol=1e-12)
        assert_allclose(eig.reconstruct(), T.to_dense(), atol=1e-12)

    def test_order_one(self):
        eig = sym_tridiag_eigen(SymTridiagonal([3.5], []))
        assert eig.values.tolist() == [3.5]
        assert eig.vectors.tolist() == [[1.0]]

    def test_two_by_two_closed_form(self):
        eig = sym_tridiag_eigen(SymTridiagonal([2.0, 2.0], [1.0]))
        assert_allclose(eig.values, [1.0, 3.0], atol=1e-14)


class TestReflector:
    @hsettings(max_examples=30, deadline=None)
    @given(seed=seeds, n=st.integers(min_value=2, max_value=10))
    def test_reflector_algebra(self, seed, n):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(n)
        H = make_reflector(w)
        assert_allclose(H.apply(w), -w, atol=1e-12)
        x = rng.standard_normal(n)
        x -= (x @ w) / (w @ w) * w
        assert_allclose(H.apply(x), x, atol=1e-12)
        M = H.matrix()
        assert_allclose(M @ M, np.eye(n), atol=1e-12)
        assert_allclose(M, M.T, atol=0.0)

    def test_conjugate_preserves_spectrum(self, rng):
        A = random_symmetric(rng, 6)
        H = make_reflector(rng.standard_normal(6))
        assert_allclose(np.linalg.eigvalsh(H.conjugate(A)), np.linalg.eigvalsh(A), atol=1e-12)

    def test_zero_axis_rejected(self):
        with pytest.raises(InvalidInputError):
            make_reflector(np.zeros(3))


class TestOrthonormalize:
    @hsettings(max_examples=25, deadline=None)
    @given(seed=seeds, n=st.integers(min_value=3, max_value=10), k=st.integers(min_value=1, max_value=3))
    def test_independent_vectors(self, seed, n, k):
        rng = np.random.default_rng(seed)
        vectors = [rng.standard_normal(n) for _ in range(k)]
        basis, rank = orthonormalize(vectors)
        assert rank == k
        B = np.column_stack(basis)
        assert_allclose(B.T @ B, np.eye(k), atol=1e-12)

    def test_dependent_vector_dropped(self, rng):
        u = rng.standard_normal(5)
        v = rng.standard_normal(5)
        basis, rank = orthonormalize([u, v, 2.0 * u - 3.0 * v, np.zeros(5)])
        assert rank == 2
        assert len(basis) == 2

    def test_empty_list(self):
        with pytest.raises(InvalidInputError):
            orthonormalize([])

    def test_mismatched_dimensions(self):
        with pytest.raises(DimensionMismatchError):
            orthonormalize([np.ones(3), np.ones(4)])


def test_normalize_zero_vector():
    with pytest.raises(InvalidInputError):
        normalize(np.zeros(4))
