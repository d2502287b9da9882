"""Grid transfers and Galerkin level hierarchies.

Restriction is full weighting ``[1, 2, 1] / 4`` and interpolation is linear,
so ``restrict == interpolate.T / 2``.  Three boundary families exist:

``periodic``  fine ``n`` (even) -> ``n/2``; coarse node ``i`` sits on fine node ``2i``, indices wrap.
``zero``      same layout, values outside the grid are zero.
``dirichlet`` fine ``2m+1`` interior nodes -> ``m``; coarse node ``i`` sits on fine node ``2i+1``.

Levels are numbered from 1 (finest) to L (coarsest), as in the V-cycle.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .numerics import DENSE_CAP, LUFactor, NumericsError
from .problems import LinearSystemOp, probe_diagonal

KINDS = ("periodic", "zero", "dirichlet")


class TransferError(ValueError):
    pass


def coarse_size(n: int, kind: str) -> int:
    if kind not in KINDS:
        raise TransferError(f"unknown transfer kind {kind!r}")
    if kind == "dirichlet":
        if n % 2 != 1 or n < 3:
            raise TransferError(f"dirichlet transfers need an odd length >= 3, got {n}")
        return (n - 1) // 2
    if n % 2 != 0 or n < 2:
        raise TransferError(f"odd length {n} cannot be coarsened")
    return n // 2


def fine_size(n_coarse: int, kind: str) -> int:
    return 2 * n_coarse + 1 if kind == "dirichlet" else 2 * n_coarse


def _restrict_last(v: np.ndarray, kind: str) -> np.ndarray:
    nc = coarse_size(v.shape[-1], kind)
    if kind == "periodic":
        c = v[..., 0::2]
        return 0.5 * c + 0.25 * (v[..., 1::2] + np.roll(v[..., 1::2], 1, axis=-1))
    if kind == "zero":
        c = 0.5 * v[..., 0::2] + 0.25 * v[..., 1::2]
        c[..., 1:] += 0.25 * v[..., 1:-1:2]
        return c
    return 0.5 * v[..., 1::2] + 0.25 * (v[..., 0:-1:2][..., :nc] + v[..., 2::2][..., :nc])


def _interpolate_last(w: np.ndarray, kind: str) -> np.ndarray:
    nc = w.shape[-1]
    nf = fine_size(nc, kind)
    out = np.zeros(w.shape[:-1] + (nf,))
    if kind == "periodic":
        out[..., 0::2] = w
        out[..., 1::2] = 0.5 * (w + np.roll(w, -1, axis=-1))
    elif kind == "zero":
        out[..., 0::2] = w
        out[..., 1::2] = 0.5 * w
        out[..., 1:-1:2] += 0.5 * w[..., 1:]
    else:
        out[..., 1::2] = w
        out[..., 0::2][..., :nc] = 0.5 * w
        out[..., 2::2] += 0.5 * w
    return out


def restrict_1d(v, kind: str = "periodic") -> np.ndarray:
    return _restrict_last(np.asarray(v, dtype=float), kind)


def interpolate_1d(w, kind: str = "periodic") -> np.ndarray:
    return _interpolate_last(np.asarray(w, dtype=float), kind)


def restrict_2d(M, kind: str = "periodic") -> np.ndarray:
    """``Mat((R kron R) Vec(M)) = R M R^T``."""
    M = _restrict_last(np.asarray(M, dtype=float), kind)
    return np.swapaxes(_restrict_last(np.swapaxes(M, -1, -2), kind), -1, -2)


def interpolate_2d(M, kind: str = "periodic") -> np.ndarray:
    M = _interpolate_last(np.asarray(M, dtype=float), kind)
    return np.swapaxes(_interpolate_last(np.swapaxes(M, -1, -2), kind), -1, -2)


@dataclass(frozen=True)
class TransferPair:
    restrict: Callable[[np.ndarray], np.ndarray]
    interpolate: Callable[[np.ndarray], np.ndarray]
    fine_shape: tuple
    coarse_shape: tuple
    kind: str

    # restrict == ADJOINT_SCALE * interpolate^T per axis
    ADJOINT_SCALE = 0.5

    def interpolate_adjoint(self, v):
        """Exact transpose of ``interpolate``."""
        return self.restrict(v) / self.ADJOINT_SCALE ** len(self.fine_shape)

    def restrict_adjoint(self, w):
        return self.interpolate(w) * self.ADJOINT_SCALE ** len(self.fine_shape)


def make_transfer(fine_shape: tuple, kind: str) -> TransferPair:
    coarse = tuple(coarse_size(s, kind) for s in fine_shape)
    if len(fine_shape) == 1:
        return TransferPair(lambda v: restrict_1d(v, kind), lambda w: interpolate_1d(w, kind),
                            tuple(fine_shape), coarse, kind)
    if len(fine_shape) == 2:
        return TransferPair(lambda v: restrict_2d(v, kind), lambda w: interpolate_2d(w, kind),
                            tuple(fine_shape), coarse, kind)
    raise TransferError("only 1D and 2D grids are supported")


def galerkin(op: LinearSystemOp, tp: TransferPair, level: int) -> LinearSystemOp:
    def apply(v):
        return tp.restrict(op(tp.interpolate(v)))

    return LinearSystemOp(apply=apply, shape=tp.coarse_shape, symmetric=op.symmetric, spd=op.spd,
                          transfer=op.transfer, name=f"{op.name}@L{level}")


def _dense_op(M: np.ndarray, like: LinearSystemOp) -> LinearSystemOp:
    shape = like.shape

    def apply(v):
        flat = np.swapaxes(v, -1, -2).reshape(v.shape[: v.ndim - len(shape)] + (-1,)) if len(shape) == 2 \
            else v
        out = flat @ M.T
        if len(shape) == 2:
            n, m = shape
            return np.swapaxes(out.reshape(out.shape[:-1] + (m, n)), -1, -2)
        return out

    return LinearSystemOp(apply=apply, shape=shape, symmetric=like.symmetric, spd=like.spd,
                          diagonal=np.diag(M).reshape(shape[::-1]).T if len(shape) == 2 else np.diag(M).copy(),
                          transfer=like.transfer, name=like.name)


class LevelHierarchy:
    """Operators ``A^(1..L)`` linked by Galerkin coarsening, plus coarse solvers.

    Coarse levels with at most ``dense_below`` unknowns are materialized once
    (the dense matrix equals the Galerkin triple product to rounding); larger
    ones stay matrix-free.  A dense LU of any level can be requested through
    :meth:`coarse_solver`; the one at level ``L`` is built eagerly.
    """

    def __init__(self, op: LinearSystemOp, L: int, dense_below: int = 512, cap: int = DENSE_CAP):
        if L < 1:
            raise TransferError(f"L must be >= 1, got {L}")
        ops = [op]
        transfers = []
        for level in range(1, L):
            try:
                tp = make_transfer(ops[-1].shape, op.transfer)
            except TransferError as exc:
                raise TransferError(f"grid {ops[-1].shape} cannot be coarsened to {L} levels: {exc}") from None
            coarse = galerkin(ops[-1], tp, level + 1)
            if coarse.n_total <= min(dense_below, cap):
                coarse = _dense_op(coarse.densify(cap), coarse)
            transfers.append(tp)
            ops.append(coarse)
        if ops[-1].n_total > cap:
            raise TransferError(f"coarsest level has {ops[-1].n_total} unknowns, above dense cap {cap}")
        self.ops = ops
        self.transfers = transfers
        self.L = L
        self.cap = cap
        self._solvers: dict = {}
        self._diags: dict = {}
        self.coarse_solver(L)

    @property
    def ndim(self) -> int:
        return self.ops[0].ndim

    def op(self, level: int) -> LinearSystemOp:
        self._check(level)
        return self.ops[level - 1]

    def shape(self, level: int) -> tuple:
        return self.op(level).shape

    def transfer(self, level: int) -> TransferPair:
        """Transfer pair between ``level`` and ``level + 1``."""
        if not 1 <= level < self.L:
            raise TransferError(f"no transfer below level {level} (L={self.L})")
        return self.transfers[level - 1]

    def _check(self, level: int) -> None:
        if not 1 <= level <= self.L:
            raise TransferError(f"level {level} out of range 1..{self.L}")

    def coarse_solver(self, level: int) -> LUFactor:
        self._check(level)
        if level not in self._solvers:
            op = self.op(level)
            try:
                self._solvers[level] = LUFactor(op.densify(self.cap), self.cap)
            except NumericsError as exc:
                raise TransferError(f"level {level}: {exc}") from None
        return self._solvers[level]

    def solve(self, level: int, y: np.ndarray) -> np.ndarray:
        """Dense solve of ``A^(level) x = y`` (batched)."""
        lu = self.coarse_solver(level)
        shape = self.shape(level)
        if len(shape) == 1:
            return lu.solve(y)
        n, m = shape
        flat = np.swapaxes(y, -1, -2).reshape(y.shape[:-2] + (n * m,))
        x = lu.solve(flat)
        return np.swapaxes(x.reshape(x.shape[:-1] + (m, n)), -1, -2)

    def diagonal(self, level: int) -> np.ndarray:
        op = self.op(level)
        if level not in self._diags:
            self._diags[level] = op.diagonal if op.diagonal is not None else probe_diagonal(op)
        return self._diags[level]

    def interpolate_to_fine(self, v: np.ndarray, level: int) -> np.ndarray:
        """Composite interpolation ``I_level^1``."""
        for l in range(level - 1, 0, -1):
            v = self.transfer(l).interpolate(v)
        return v

    def interpolate_to_fine_adjoint(self, v: np.ndarray, level: int) -> np.ndarray:
        for l in range(1, level):
            v = self.transfer(l).interpolate_adjoint(v)
        return v


def build_hierarchy(op: LinearSystemOp, L: int, dense_below: int = 512,
                    cap: Optional[int] = None) -> LevelHierarchy:
    return LevelHierarchy(op, L, dense_below=dense_below, cap=DENSE_CAP if cap is None else cap)
