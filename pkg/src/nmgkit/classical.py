"""Baseline solvers: weighted Jacobi, the multigrid V-cycle and conjugate gradients."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .problems import LinearSystemOp
from .transfer import LevelHierarchy


class SolverError(RuntimeError):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    converged: bool
    wall_time: float
    method: str
    solution: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("solution")
        d["residual_history"] = [float(r) for r in self.residual_history]
        d["iterations"] = int(self.iterations)
        d["converged"] = bool(self.converged)
        d["wall_time"] = float(self.wall_time)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        return cls(int(d["iterations"]), list(d["residual_history"]), bool(d["converged"]),
                   float(d["wall_time"]), str(d["method"]))


def _norm(v) -> float:
    return float(np.linalg.norm(v))


def weighted_jacobi(op, diag, x, y, nu: int, omega: float = 0.5):
    """``nu`` sweeps of ``x <- x + omega D^{-1} (y - A x)``."""
    if nu < 0:
        raise ValueError("nu must be >= 0")
    diag = np.asarray(diag, dtype=float)
    if np.any(diag == 0):
        raise SolverError(f"zero diagonal entry at index {int(np.flatnonzero(diag.ravel() == 0)[0])}")
    x = np.array(x, dtype=float, copy=True)
    inv = omega / diag
    for _ in range(nu):
        x += inv * (y - op(x))
    return x


def jacobi_reduction_factor(phi, alpha: float, omega: float = 0.5):
    """Per-sweep reduction ``1 - mu_phi = omega/(2+alpha) * (2 + alpha - 2 cos(phi))``.

    This is the damping of the Fourier mode of angular frequency ``phi`` for
    the periodic model matrix ``tridiag(-1, 2+alpha, -1)``.
    """
    phi = np.asarray(phi, dtype=float)
    return omega / (2.0 + alpha) * (2.0 + alpha - 2.0 * np.cos(phi))


def mg_cycle(hier: LevelHierarchy, x, y, nu1: int, nu2: int, level: int = 1,
             omega: float = 0.5, coarsest: Optional[int] = None):
    """One multigrid V-cycle on ``level`` (``nu2 = 0`` gives the backslash cycle)."""
    L = hier.L if coarsest is None else coarsest
    if not 1 <= level <= L <= hier.L:
        raise SolverError(f"level {level} out of range for coarsest level {L} (hierarchy L={hier.L})")
    if level == L:
        return hier.solve(level, y)
    op = hier.op(level)
    diag = hier.diagonal(level)
    x = weighted_jacobi(op, diag, x, y, nu1, omega)
    tp = hier.transfer(level)
    y_c = tp.restrict(y - op(x))
    e_c = mg_cycle(hier, np.zeros(tp.coarse_shape), y_c, nu1, nu2, level + 1, omega, L)
    x = x + tp.interpolate(e_c)
    return weighted_jacobi(op, diag, x, y, nu2, omega)


def _iterate(step, op, y, tol, max_iter, method, x0=None, diverge_factor=None, diverge_patience=5):
    """Run ``x <- step(x)`` until the relative residual drops below ``tol``.

    With ``diverge_factor`` set, a residual above ``diverge_factor`` times the
    initial one for ``diverge_patience`` consecutive cycles raises.
    """
    y = np.asarray(y, dtype=float)
    ynorm = _norm(y)
    x = np.zeros_like(y) if x0 is None else np.array(x0, dtype=float)
    history = []
    t0 = time.perf_counter()
    if ynorm == 0.0:
        return SolveReport(1, [0.0], True, time.perf_counter() - t0, method, np.zeros_like(y))
    res0 = _norm(y - op(x)) / ynorm
    streak = 0
    for it in range(1, max_iter + 1):
        x = step(x)
        res = _norm(y - op(x)) / ynorm
        if not np.isfinite(res):
            raise SolverError(f"{method}: non-finite residual at cycle {it}")
        history.append(res)
        if res <= tol:
            break
        if diverge_factor is not None:
            streak = streak + 1 if res > diverge_factor * res0 else 0
            if streak >= diverge_patience:
                raise SolverError(f"{method}: diverged, residual {res:.3e} above {diverge_factor:g}x the "
                                  f"initial {res0:.3e} for {streak} consecutive cycles (cycle {it})")
    converged = history[-1] <= tol
    return SolveReport(len(history), history, converged, time.perf_counter() - t0, method, x)


def mg_solve(hier: LevelHierarchy, y, nu1: int = 5, nu2: int = 0, tol: float = 1e-6,
             max_cycles: int = 30000, omega: float = 0.5, coarsest: Optional[int] = None) -> SolveReport:
    """Repeat V-cycles from ``x = 0`` until the relative residual drops below ``tol``."""
    if max_cycles < 1:
        raise ValueError("max_cycles must be >= 1")

    def step(x):
        return mg_cycle(hier, x, y, nu1, nu2, 1, omega, coarsest)

    return _iterate(step, hier.op(1), y, tol, max_cycles, "mg")


def cg_solve(op: LinearSystemOp, y, tol: float = 1e-6, max_iter: int = 100000) -> SolveReport:
    """Conjugate gradients from a zero initial guess."""
    if not op.spd:
        raise SolverError("cg_solve requires an SPD operator")
    y = np.asarray(y, dtype=float)
    ynorm = _norm(y)
    t0 = time.perf_counter()
    x = np.zeros_like(y)
    if ynorm == 0.0:
        return SolveReport(1, [0.0], True, 0.0, "cg", x)
    r = y.copy()
    p = r.copy()
    rr = float(np.vdot(r, r))
    history = []
    for it in range(1, max_iter + 1):
        Ap = op(p)
        pAp = float(np.vdot(p, Ap))
        if not pAp > 0:
            raise SolverError(f"cg breakdown at iteration {it}: p^T A p = {pAp:.3e} (operator not SPD in floating point)")
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = float(np.vdot(r, r))
        history.append(np.sqrt(rr_new) / ynorm)
        if history[-1] <= tol:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    converged = history[-1] <= tol
    return SolveReport(len(history), history, converged, time.perf_counter() - t0, "cg", x)
