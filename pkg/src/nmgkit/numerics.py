"""Dense and structured linear algebra used throughout the kit.

Conventions
-----------
* Forward DFTs are unnormalized, ``X[k] = sum_j x[j] exp(-2*pi*i*j*k/n)``;
  inverse transforms divide by ``n`` (``n*m`` in 2D).
* Spectra are stored in natural order (bin 0 is DC).  :func:`center` and
  :func:`uncenter` convert to and from the centered ordering used by the
  frequency masks, where index ``j`` carries angular frequency
  ``phi_j = 2*pi*(j - n//2)/n`` (for even ``n`` this is ``(2j - n)*pi/n``).
* Every routine acting on vectors works on the trailing axis and broadcasts
  over leading (batch) axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy.linalg import solve_triangular

DENSE_CAP = 4096

Operator = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


class NumericsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Fourier transforms


def dft1(v):
    v = np.asarray(v)
    if v.shape[-1] == 0:
        raise NumericsError("empty vector")
    return np.fft.fft(v, axis=-1)


def idft1(v):
    v = np.asarray(v)
    if v.shape[-1] == 0:
        raise NumericsError("empty vector")
    return np.fft.ifft(v, axis=-1)


def dft2(M):
    M = np.asarray(M)
    if M.ndim < 2 or M.shape[-1] == 0 or M.shape[-2] == 0:
        raise NumericsError("empty matrix")
    return np.fft.fft2(M, axes=(-2, -1))


def idft2(M):
    M = np.asarray(M)
    if M.ndim < 2 or M.shape[-1] == 0 or M.shape[-2] == 0:
        raise NumericsError("empty matrix")
    return np.fft.ifft2(M, axes=(-2, -1))


def angular_frequencies(n: int) -> np.ndarray:
    """Angular frequency of each *centered* bin, ascending, within [-pi, pi)."""
    return 2.0 * np.pi * np.fft.fftshift(np.fft.fftfreq(n))


def center(spec, ndim: int = 1):
    """Natural-order spectrum -> centered order (DC in the middle)."""
    return np.fft.fftshift(spec, axes=tuple(range(-ndim, 0)))


def uncenter(spec, ndim: int = 1):
    """Centered-order spectrum (or mask) -> natural order."""
    return np.fft.ifftshift(spec, axes=tuple(range(-ndim, 0)))


# ---------------------------------------------------------------------------
# Toeplitz and Kronecker products


@dataclass(frozen=True, eq=False)
class ToeplitzKernel:
    """n x n Toeplitz matrix ``T[i, j] = first_col[i-j]`` (i >= j), ``first_row[j-i]`` (j > i)."""

    first_col: np.ndarray
    first_row: np.ndarray

    def __post_init__(self):
        col = np.asarray(self.first_col, dtype=float)
        row = np.asarray(self.first_row, dtype=float)
        if col.ndim != 1 or col.shape != row.shape or col.size == 0:
            raise NumericsError("first_col and first_row must be nonempty vectors of equal length")
        if col[0] != row[0]:
            raise NumericsError("first_col[0] must equal first_row[0]")
        object.__setattr__(self, "first_col", col)
        object.__setattr__(self, "first_row", row)

    @property
    def n(self) -> int:
        return self.first_col.size

    @property
    def symmetric(self) -> bool:
        return bool(np.array_equal(self.first_col, self.first_row))

    @cached_property
    def embed_size(self) -> int:
        size = 1
        while size < 2 * self.n - 1:
            size *= 2
        return size

    @cached_property
    def _symbol(self) -> np.ndarray:
        n, size = self.n, self.embed_size
        c = np.zeros(size)
        c[:n] = self.first_col
        if n > 1:
            c[size - n + 1:] = self.first_row[1:][::-1]
        return np.fft.rfft(c)

    def dense(self) -> np.ndarray:
        n = self.n
        i, j = np.indices((n, n))
        return np.where(i >= j, self.first_col[np.abs(i - j)], self.first_row[np.abs(i - j)])


def toeplitz_matvec(T: ToeplitzKernel, x) -> np.ndarray:
    """``T @ x`` along the last axis via circulant embedding (O(n log n))."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != T.n:
        raise NumericsError(f"dimension mismatch: kernel n={T.n}, vector length {x.shape[-1]}")
    y = np.fft.irfft(np.fft.rfft(x, n=T.embed_size, axis=-1) * T._symbol, n=T.embed_size, axis=-1)
    return y[..., : T.n]


def _apply_last(op: Operator, x: np.ndarray) -> np.ndarray:
    if callable(op):
        return op(x)
    return x @ np.asarray(op).T


def kron_matvec(A_op: Operator, B_op: Operator, X) -> np.ndarray:
    """``Mat((A kron B) Vec(X)) = B X A^T`` with column-major ``Vec``.

    Operators are dense arrays or callables acting on the last axis.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim < 2 or X.shape[-1] != X.shape[-2]:
        raise NumericsError("X must be square")
    n = X.shape[-1]
    for op in (A_op, B_op):
        if not callable(op) and np.asarray(op).shape != (n, n):
            raise NumericsError(f"dimension mismatch: operator {np.asarray(op).shape} vs X {X.shape[-2:]}")
    BX = np.swapaxes(_apply_last(B_op, np.swapaxes(X, -1, -2)), -1, -2)
    return _apply_last(A_op, BX)


def vec(X) -> np.ndarray:
    """Column-major vectorization over the trailing two axes."""
    X = np.asarray(X)
    return np.swapaxes(X, -1, -2).reshape(X.shape[:-2] + (-1,))


def mat(v, shape) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    n, m = shape
    return np.swapaxes(v.reshape(v.shape[:-1] + (m, n)), -1, -2)


# ---------------------------------------------------------------------------
# Dense solves and eigenproblems


def check_dense_size(n: int, cap: int = DENSE_CAP) -> None:
    if n > cap:
        raise NumericsError(f"dense size {n} exceeds cap {cap}")


class LUFactor:
    """LU factorization with partial pivoting, ``P A = L U``."""

    def __init__(self, A, cap: int = DENSE_CAP):
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise NumericsError("matrix must be square")
        n = A.shape[0]
        check_dense_size(n, cap)
        piv = np.arange(n)
        tiny = np.finfo(float).eps * max(n, 1) * max(np.abs(A).max(initial=0.0), np.finfo(float).tiny)
        for k in range(n):
            p = k + int(np.argmax(np.abs(A[k:, k])))
            if abs(A[p, k]) <= tiny:
                raise NumericsError(f"matrix is singular to working precision at pivot {k}")
            if p != k:
                A[[k, p]] = A[[p, k]]
                piv[[k, p]] = piv[[p, k]]
            A[k + 1:, k] /= A[k, k]
            A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:])
        self.lu = A
        self.perm = piv
        self.n = n

    def solve(self, b) -> np.ndarray:
        """Solve ``A x = b``; ``b`` may carry leading batch axes."""
        b = np.asarray(b, dtype=float)
        if b.shape[-1] != self.n:
            raise NumericsError(f"dimension mismatch: matrix n={self.n}, rhs length {b.shape[-1]}")
        lead = b.shape[:-1]
        rhs = b.reshape(-1, self.n).T[self.perm]
        y = solve_triangular(self.lu, rhs, lower=True, unit_diagonal=True, check_finite=False)
        x = solve_triangular(self.lu, y, lower=False, check_finite=False)
        return x.T.reshape(lead + (self.n,))


def lu_solve(A, b) -> np.ndarray:
    return LUFactor(A).solve(b)


def _round_robin(m: int):
    """Yield the m-1 rounds of disjoint index pairs covering all pairs of range(m), m even."""
    players = list(range(m))
    for _ in range(m - 1):
        yield [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        players = [players[0], players[-1]] + players[1:-1]


def eig_sym(A, tol: float = 1e-10, max_sweeps: int = 60, cap: int = DENSE_CAP):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin order so that each round touches
    disjoint index pairs and can be vectorized.  Returns ascending eigenvalues
    and the matching orthonormal eigenvectors as columns.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NumericsError("matrix must be square")
    n = A.shape[0]
    check_dense_size(n, cap)
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    if np.abs(A - A.T).max(initial=0.0) > tol * scale:
        raise NumericsError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    m = n + (n % 2)
    if m != n:
        A = np.pad(A, ((0, 1), (0, 1)))
    V = np.eye(m)
    fro = max(np.linalg.norm(A), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        if np.linalg.norm(A - np.diag(np.diag(A))) <= 1e-15 * fro:
            break
        for pairs in _round_robin(m):
            p = np.array([a for a, _ in pairs])
            q = np.array([b for _, b in pairs])
            apq = A[p, q]
            active = np.abs(apq) > 1e-300
            theta = np.where(active, (A[q, q] - A[p, p]) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            big = np.abs(theta) > 1e150
            root = np.sqrt(np.where(big, 1.0, theta) ** 2 + 1.0)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), np.sign(theta) / (np.abs(theta) + root))
            t = np.where(active & (theta == 0.0), 1.0, np.where(active, t, 0.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = c * Ap - s * Aq
            A[:, q] = s * Ap + c * Aq
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = c * Vp - s * Vq
            V[:, q] = s * Vp + c * Vq
    values = np.diag(A)[:n].copy()
    vectors = V[:n, :n]
    order = np.argsort(values, kind="stable")
    return values[order], vectors[:, order]
