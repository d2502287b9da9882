"""Benchmark linear systems as matrix-free operators.

Four systems are available: the 1D integral equation with Tikhonov or
anisotropic regularization, the 1D second-order PDE with Dirichlet
boundaries, and the 2D integral equation with Kronecker structure
``alpha I kron I + K kron K``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .numerics import (
    DENSE_CAP,
    NumericsError,
    ToeplitzKernel,
    check_dense_size,
    kron_matvec,
    mat,
    toeplitz_matvec,
    vec,
)

REGULARIZATIONS = ("tikhonov", "anisotropic", "pde")
BOUNDARIES = ("circulant", "toeplitz-zero")


class ProblemError(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ProblemSpec:
    dimension: int = 1
    n: int = 256
    alpha: float = 1e-4
    kernel_sigma: float = 1.5
    sigma_units: str = "mesh"
    regularization: str = "tikhonov"
    boundary: str = "circulant"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ProblemError(f"dimension must be 1 or 2, got {self.dimension}")
        if not _is_pow2(int(self.n)) or self.n < 8:
            raise ProblemError(f"n must be a power of two >= 8, got {self.n}")
        if not self.alpha > 0:
            raise ProblemError(f"alpha must be positive, got {self.alpha}")
        if self.regularization not in REGULARIZATIONS:
            raise ProblemError(f"unknown regularization {self.regularization!r}")
        if self.regularization in ("anisotropic", "pde") and self.dimension != 1:
            raise ProblemError(f"regularization {self.regularization!r} is only defined for dimension 1")
        if self.boundary not in BOUNDARIES:
            raise ProblemError(f"unknown boundary {self.boundary!r}")
        if self.sigma_units not in ("mesh", "physical"):
            raise ProblemError(f"unknown sigma_units {self.sigma_units!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Stable hash used to tie checkpoints to the system they were trained on."""
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class LinearSystemOp:
    """Matrix-free operator on a grid of shape ``shape`` (batched over leading axes).

    ``transfer`` names the grid-transfer family that matches the boundary
    treatment: ``periodic``, ``zero`` or ``dirichlet``.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    shape: tuple
    symmetric: bool = True
    spd: bool = False
    diagonal: Optional[np.ndarray] = None
    transfer: str = "periodic"
    name: str = "op"
    meta: dict = field(default_factory=dict)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[x.ndim - len(self.shape):] != self.shape:
            raise ProblemError(f"{self.name}: expected trailing shape {self.shape}, got {x.shape}")
        return self.apply(x)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def n_total(self) -> int:
        return int(np.prod(self.shape))

    def densify(self, cap: int = DENSE_CAP) -> np.ndarray:
        """Dense matrix acting on ``vec`` (column-major in 2D), built by basis probing."""
        N = self.n_total
        check_dense_size(N, cap)
        eye = np.eye(N)
        if self.ndim == 1:
            return self(eye).T
        cols = vec(self(mat(eye, self.shape)))
        return cols.T

    def get_diagonal(self) -> np.ndarray:
        if self.diagonal is not None:
            return self.diagonal
        return probe_diagonal(self)


def probe_diagonal(op: LinearSystemOp, period: int = 64, chunk: int = 256) -> np.ndarray:
    """Diagonal by probing with periodic indicator vectors.

    Exact whenever entries at index distance >= ``period`` (per axis, with
    wrap-around) vanish; Gaussian couplings beyond 40 mesh widths are below
    double precision for the kernels used here.
    """
    shape = op.shape
    periods = [min(period, s) for s in shape]
    combos = np.stack(np.meshgrid(*[np.arange(p) for p in periods], indexing="ij"), -1).reshape(-1, len(shape))
    diag = np.zeros(shape)
    grids = np.indices(shape)
    for start in range(0, len(combos), chunk):
        block = combos[start:start + chunk]
        probes = np.ones((len(block),) + shape, dtype=bool)
        for ax, p in enumerate(periods):
            probes &= (grids[ax] % p)[None] == block[:, ax].reshape((-1,) + (1,) * len(shape))
        probes = probes.astype(float)
        diag += np.sum(op(probes) * probes, axis=0)
    return diag


def gaussian_weights(n: int, sigma: float, sigma_units: str = "mesh") -> np.ndarray:
    if not sigma > 0:
        raise ProblemError(f"sigma must be positive, got {sigma}")
    h = 1.0 / n
    s_phys = sigma * h if sigma_units == "mesh" else sigma
    lags = np.arange(n) * h
    return h * np.exp(-(lags**2) / (2.0 * s_phys**2))


def build_gaussian_kernel(n: int, sigma: float = 1.5, sigma_units: str = "mesh",
                          boundary: str = "circulant") -> ToeplitzKernel:
    """Symmetric Gaussian convolution kernel, normalized so a full row sums to one."""
    w = gaussian_weights(n, sigma, sigma_units)
    if boundary == "circulant":
        col = w[np.minimum(np.arange(n), n - np.arange(n))]
        col = col / col.sum()
    elif boundary == "toeplitz-zero":
        col = w / (w[0] + 2.0 * w[1:].sum())
    else:
        raise ProblemError(f"unknown boundary {boundary!r}")
    return ToeplitzKernel(col, col.copy())


def kernel_spectrum_bounds(K: ToeplitzKernel, periodic: bool):
    """Lower and upper bounds on the eigenvalues of a symmetric kernel matrix.

    Circulant: exact extreme eigenvalues.  Toeplitz: extremes of the
    generating function ``c_0 + 2 sum_k c_k cos(k theta)``, sampled finely.
    """
    if periodic:
        lam = np.fft.fft(K.first_col).real
        return float(lam.min()), float(lam.max())
    n = K.n
    theta = np.linspace(0.0, np.pi, 16 * n + 1)
    f = K.first_col[0] + 2.0 * np.cos(np.outer(theta, np.arange(1, n))) @ K.first_col[1:]
    return float(f.min()), float(f.max())


def _transfer_for(boundary: str) -> str:
    return "periodic" if boundary == "circulant" else "zero"


def anisotropic_stencil(n: int):
    """Three-point stencil of ``-(a u')'`` with ``a(z) = 1 + 0.5 sin(2 pi z)`` at midpoints.

    The stencil is left unscaled by ``1/h^2`` so that ``alpha`` weighs it on
    the same footing as the identity in the Tikhonov case.
    """
    z_mid = (np.arange(n) + 0.5) / n
    a_right = 1.0 + 0.5 * np.sin(2.0 * np.pi * z_mid)   # a_{i+1/2}
    a_left = np.roll(a_right, 1)                        # a_{i-1/2}, a is 1-periodic
    return a_left, a_right


def build_integral_1d(spec: ProblemSpec, kernel: Optional[ToeplitzKernel] = None) -> LinearSystemOp:
    """``alpha I + K`` (tikhonov) or ``alpha D + K`` (anisotropic).

    ``kernel`` overrides the Gaussian kernel (used by tests to plug in zero or
    identity kernels).
    """
    if spec.dimension != 1:
        raise ProblemError("build_integral_1d needs dimension == 1")
    if spec.regularization not in ("tikhonov", "anisotropic"):
        raise ProblemError(f"regularization {spec.regularization!r} is not an integral problem")
    n, alpha = spec.n, spec.alpha
    K = kernel if kernel is not None else build_gaussian_kernel(n, spec.kernel_sigma, spec.sigma_units, spec.boundary)
    if K.n != n:
        raise ProblemError("kernel size does not match n")
    periodic = spec.boundary == "circulant"

    if spec.regularization == "tikhonov":
        def apply(x):
            return alpha * x + toeplitz_matvec(K, x)

        diag = np.full(n, alpha + K.first_col[0])
    else:
        a_left, a_right = anisotropic_stencil(n)

        def apply(x):
            if periodic:
                right = np.roll(x, -1, axis=-1)
                left = np.roll(x, 1, axis=-1)
            else:
                right = np.concatenate([x[..., 1:], np.zeros_like(x[..., :1])], axis=-1)
                left = np.concatenate([np.zeros_like(x[..., :1]), x[..., :-1]], axis=-1)
            Dx = (a_left + a_right) * x - a_right * right - a_left * left
            return alpha * Dx + toeplitz_matvec(K, x)

        diag = alpha * (a_left + a_right) + K.first_col[0]

    spd = K.symmetric and alpha + kernel_spectrum_bounds(K, periodic)[0] > 0 if spec.regularization == "tikhonov" \
        else K.symmetric and kernel_spectrum_bounds(K, periodic)[0] > 0
    return LinearSystemOp(apply=apply, shape=(n,), symmetric=K.symmetric, spd=spd,
                          diagonal=diag, transfer=_transfer_for(spec.boundary),
                          name=f"integral1d-{spec.regularization}", meta={"kernel": K})


def build_pde_1d(n: int, alpha: float = 1e-4) -> LinearSystemOp:
    """``alpha u - u''`` on the ``n - 1`` interior nodes of [0, 1], ``u(0) = u(1) = 0``."""
    if n < 8:
        raise ProblemError(f"n must be >= 8, got {n}")
    h2 = (1.0 / n) ** 2

    def apply(x):
        y = (alpha + 2.0 / h2) * x
        y[..., 1:] -= x[..., :-1] / h2
        y[..., :-1] -= x[..., 1:] / h2
        return y

    return LinearSystemOp(apply=apply, shape=(n - 1,), symmetric=True, spd=True,
                          diagonal=np.full(n - 1, alpha + 2.0 / h2), transfer="dirichlet",
                          name="pde1d")


def build_integral_2d(n: int, alpha: float, sigma: float = 1.5, sigma_units: str = "mesh",
                      boundary: str = "circulant", kernel: Optional[ToeplitzKernel] = None) -> LinearSystemOp:
    """``alpha X + K X K^T``, i.e. ``(alpha I kron I + K kron K) Vec(X)``."""
    K = kernel if kernel is not None else build_gaussian_kernel(n, sigma, sigma_units, boundary)
    if K.n != n:
        raise NumericsError(f"dimension mismatch: kernel n={K.n}, grid n={n}")

    def kmul(x):
        return toeplitz_matvec(K, x)

    def apply(X):
        return alpha * X + kron_matvec(kmul, kmul, X)

    k0 = K.first_col[0]
    spd = False
    if K.symmetric:
        lo, hi = kernel_spectrum_bounds(K, boundary == "circulant")
        spd = alpha + min(lo * lo, lo * hi, hi * hi) > 0
    return LinearSystemOp(apply=apply, shape=(n, n), symmetric=K.symmetric, spd=spd,
                          diagonal=np.full((n, n), alpha + k0 * k0), transfer=_transfer_for(boundary),
                          name="integral2d", meta={"kernel": K})


def build_problem(spec: ProblemSpec) -> LinearSystemOp:
    if spec.regularization == "pde":
        return build_pde_1d(spec.n, spec.alpha)
    if spec.dimension == 1:
        return build_integral_1d(spec)
    return build_integral_2d(spec.n, spec.alpha, spec.kernel_sigma, spec.sigma_units, spec.boundary)
