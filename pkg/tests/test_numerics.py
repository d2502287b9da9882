import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmgkit.numerics import (
    LUFactor,
    NumericsError,
    ToeplitzKernel,
    angular_frequencies,
    center,
    dft1,
    dft2,
    eig_sym,
    idft1,
    idft2,
    kron_matvec,
    lu_solve,
    mat,
    toeplitz_matvec,
    uncenter,
    vec,
)


def dft_matrix(n):
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n)


@pytest.mark.parametrize("n", [1, 2, 5, 8, 17, 64])
def test_dft1_matches_brute_force(n):
    v = np.random.default_rng(n).standard_normal(n)
    np.testing.assert_allclose(dft1(v), dft_matrix(n) @ v, atol=1e-11)
    np.testing.assert_allclose(idft1(dft1(v)).real, v, atol=1e-13)


def test_dft2_matches_brute_force():
    M = np.random.default_rng(1).standard_normal((6, 10))
    expected = dft_matrix(6) @ M @ dft_matrix(10).T
    np.testing.assert_allclose(dft2(M), expected, atol=1e-11)
    np.testing.assert_allclose(idft2(dft2(M)).real, M, atol=1e-13)


def test_dft_rejects_empty():
    with pytest.raises(NumericsError, match="empty vector"):
        dft1(np.zeros(0))
    with pytest.raises(NumericsError, match="empty matrix"):
        dft2(np.zeros((0, 3)))


def test_angular_frequencies_even_and_odd():
    np.testing.assert_allclose(angular_frequencies(8), (2 * np.arange(8) - 8) * np.pi / 8)
    phi = angular_frequencies(7)
    assert phi[3] == 0.0 and phi.min() > -np.pi and phi.max() < np.pi


def test_center_places_dc_in_middle():
    spec = np.arange(8)
    c = center(spec)
    assert c[4] == 0
    np.testing.assert_array_equal(uncenter(c), spec)
    M = np.arange(35).reshape(5, 7)
    np.testing.assert_array_equal(uncenter(center(M, 2), 2), M)
    assert center(M, 2)[2, 3] == 0


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 64), seed=st.integers(0, 2**31 - 1), symmetric=st.booleans())
def test_toeplitz_matvec_matches_dense(n, seed, symmetric):
    rng = np.random.default_rng(seed)
    col = rng.standard_normal(n)
    row = col.copy() if symmetric else np.concatenate([col[:1], rng.standard_normal(n - 1)])
    T = ToeplitzKernel(col, row)
    x = rng.standard_normal((3, n))
    expected = x @ T.dense().T
    got = toeplitz_matvec(T, x)
    assert np.linalg.norm(got - expected) <= 1e-12 * max(np.linalg.norm(expected), 1e-300)


def test_toeplitz_dense_layout():
    T = ToeplitzKernel(np.array([1.0, 2.0, 3.0]), np.array([1.0, 5.0, 6.0]))
    np.testing.assert_array_equal(T.dense(), [[1, 5, 6], [2, 1, 5], [3, 2, 1]])
    assert not T.symmetric


def test_toeplitz_errors():
    with pytest.raises(NumericsError):
        ToeplitzKernel(np.array([1.0, 2.0]), np.array([2.0, 2.0]))
    T = ToeplitzKernel(np.ones(4), np.ones(4))
    with pytest.raises(NumericsError, match="dimension mismatch"):
        toeplitz_matvec(T, np.ones(5))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 24), seed=st.integers(0, 2**31 - 1))
def test_kron_matvec_matches_explicit_kronecker(n, seed):
    rng = np.random.default_rng(seed)
    A, B, X = rng.standard_normal((3, n, n))
    expected = mat(np.kron(A, B) @ vec(X), (n, n))
    got = kron_matvec(A, B, X)
    assert np.linalg.norm(got - expected) <= 1e-12 * np.linalg.norm(expected)
    # callables acting on the last axis give the same result
    got2 = kron_matvec(lambda v: v @ A.T, lambda v: v @ B.T, X)
    np.testing.assert_allclose(got2, got, rtol=1e-13, atol=1e-13)


def test_vec_is_column_major():
    X = np.array([[1, 2], [3, 4]])
    np.testing.assert_array_equal(vec(X), [1, 3, 2, 4])
    np.testing.assert_array_equal(mat(vec(X), (2, 2)), X)


def test_kron_mismatch():
    with pytest.raises(NumericsError, match="dimension mismatch"):
        kron_matvec(np.eye(3), np.eye(4), np.ones((4, 4)))


@pytest.mark.parametrize("n", [1, 3, 10, 40])
def test_lu_solve_residual(n):
    rng = np.random.default_rng(n)
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal((2, n))
    x = LUFactor(A).solve(b)
    np.testing.assert_allclose(x @ A.T, b, atol=1e-11)
    np.testing.assert_allclose(lu_solve(A, b[0]), x[0])


def test_lu_needs_pivoting():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(lu_solve(A, np.array([2.0, 3.0])), [3.0, 2.0])


def test_lu_singular_and_cap():
    with pytest.raises(NumericsError, match="singular to working precision at pivot 1"):
        LUFactor(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(NumericsError, match="exceeds cap"):
        LUFactor(np.eye(5), cap=4)


@pytest.mark.parametrize("n", [1, 2, 7, 33, 64])
def test_eig_sym_reconstructs(n):
    rng = np.random.default_rng(n)
    M = rng.standard_normal((n, n))
    S = M + M.T
    w, V = eig_sym(S)
    assert np.all(np.diff(w) >= 0)
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(V @ np.diag(w) @ V.T, S, atol=1e-11 * max(1, np.abs(S).max()))
    np.testing.assert_allclose(w, np.linalg.eigvalsh(S), atol=1e-10)


def test_eig_sym_rejects_nonsymmetric():
    with pytest.raises(NumericsError, match="not symmetric"):
        eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))
