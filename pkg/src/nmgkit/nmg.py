"""Neural multigrid cycles and the outer iterative solver.

One cycle at level ``l`` (arrays may carry a leading batch axis)::

    b = y - A_l x
    h = N_l(b / |b|) * |b|           # skipped when |b| = 0
    x = x + F'_l(h)                  # F'_l omitted in the unfiltered variant
    x = x + P_l cycle(l + 1, 0, R_l (y - A_l x))

and a dense solve of the Galerkin operator at the coarsest level ``L'``.
Norms are Euclidean in 1D and Frobenius in 2D.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .classical import SolveReport, SolverError, _iterate
from .filters import FrequencyMask, band_indicator, filter_level, make_mask
from .numerics import angular_frequencies, center
from .transfer import LevelHierarchy


class CycleError(ValueError):
    pass


def _axes(ndim: int) -> tuple:
    return tuple(range(-ndim, 0))


def batch_norm(v: np.ndarray, ndim: int) -> np.ndarray:
    """Per-sample norm over the trailing ``ndim`` axes, keeping dims for broadcasting."""
    return np.sqrt(np.sum(v * v, axis=_axes(ndim), keepdims=True))


class NeuralHierarchy:
    """A Galerkin hierarchy plus one smoother per level ``1..L-1``.

    ``smoothers`` maps level -> callable on arrays of the level shape (batched
    over leading axes).  :class:`~nmgkit.fno.FnoSmoother` instances also
    expose ``forward``/``backward`` and are required for training.
    """

    def __init__(self, base: LevelHierarchy, smoothers: Dict[int, Callable], filtered: bool = True):
        self.base = base
        self.smoothers = dict(smoothers)
        self.filtered = filtered
        L = base.L
        for level, sm in self.smoothers.items():
            if not 1 <= level < L:
                raise CycleError(f"smoother given for level {level}, outside 1..{L - 1}")
            shape = getattr(sm, "shape", None)
            if shape is not None and tuple(shape) != base.shape(level):
                raise CycleError(f"smoother for level {level} has shape {tuple(shape)}, grid is {base.shape(level)}")
        self.level_masks: Dict[int, FrequencyMask] = {
            l: make_mask(l, L, base.shape(l), "level") for l in range(1, L)
        }

    @property
    def L(self) -> int:
        return self.base.L

    @property
    def ndim(self) -> int:
        return self.base.ndim

    def with_smoothers(self, smoothers: Dict[int, Callable], filtered: Optional[bool] = None) -> "NeuralHierarchy":
        return NeuralHierarchy(self.base, smoothers, self.filtered if filtered is None else filtered)

    def smooth_filter(self, h: np.ndarray, level: int) -> np.ndarray:
        return filter_level(h, self.level_masks[level]) if self.filtered else h


@dataclass
class LevelTrace:
    """What one level of a cycle computed; consumed by the training losses."""

    level: int
    u: np.ndarray          # normalized residual fed to the smoother
    scale: np.ndarray      # residual norm (keepdims)
    out: np.ndarray        # raw smoother output
    h: np.ndarray          # out * scale
    hf: np.ndarray         # correction actually added (filtered or not)
    cache: object = None


@dataclass
class CycleTrace:
    levels: List[LevelTrace] = field(default_factory=list)
    coarse_level: int = 0
    coarse_rhs: Optional[np.ndarray] = None
    keep_cache: bool = True


def _run_smoother(sm, u, want_cache: bool):
    if want_cache:
        if not hasattr(sm, "forward"):
            raise CycleError("training needs smoothers with a forward/backward pair")
        return sm.forward(u)
    return sm(u), None


def _cycle(nh: NeuralHierarchy, x, y, level: int, Lp: int, trace: Optional[CycleTrace]):
    base = nh.base
    if level == Lp:
        if trace is not None:
            trace.coarse_level = level
            trace.coarse_rhs = y
        return base.solve(level, y)
    sm = nh.smoothers.get(level)
    if sm is None:
        raise CycleError(f"no smoother for level {level} (needed for coarsest level {Lp})")
    op = base.op(level)
    nd = nh.ndim
    b = y - op(x)
    scale = batch_norm(b, nd)
    live = scale > 0
    u = b / np.where(live, scale, 1.0)
    if trace is None and not np.any(live):
        out = np.zeros_like(u)
        cache = None
    else:
        out, cache = _run_smoother(sm, u, trace is not None and trace.keep_cache)
    h = np.where(live, out * scale, 0.0)
    hf = nh.smooth_filter(h, level)
    if trace is not None:
        trace.levels.append(LevelTrace(level, u, scale, out, h, hf, cache))
    x = x + hf
    tp = base.transfer(level)
    yc = tp.restrict(y - op(x))
    ec = _cycle(nh, np.zeros(yc.shape), yc, level + 1, Lp, trace)
    return x + tp.interpolate(ec)


def _check_Lp(nh: NeuralHierarchy, Lp: Optional[int]) -> int:
    Lp = nh.L if Lp is None else int(Lp)
    if not 2 <= Lp <= nh.L:
        raise CycleError(f"coarsest level L'={Lp} must lie in 2..{nh.L}")
    return Lp


def nmg_cycle(nh: NeuralHierarchy, x, y, level: int = 1, Lp: Optional[int] = None,
              trace: Optional[CycleTrace] = None) -> np.ndarray:
    """One neural multigrid cycle (1D or 2D, batched over leading axes)."""
    Lp = _check_Lp(nh, Lp)
    if not 1 <= level <= Lp:
        raise CycleError(f"level {level} out of range 1..{Lp}")
    shape = nh.base.shape(level)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[x.ndim - len(shape):] != shape or y.shape[y.ndim - len(shape):] != shape:
        raise CycleError(f"inputs {x.shape}, {y.shape} do not match level {level} grid {shape}")
    return _cycle(nh, x, y, level, Lp, trace)


def nmg_cycle_1d(nh: NeuralHierarchy, x, y, level: int = 1, Lp: Optional[int] = None, trace=None):
    if nh.ndim != 1:
        raise CycleError("nmg_cycle_1d needs a 1D hierarchy")
    return nmg_cycle(nh, x, y, level, Lp, trace)


def nmg_cycle_2d(nh: NeuralHierarchy, X, Y, level: int = 1, Lp: Optional[int] = None, trace=None):
    if nh.ndim != 2:
        raise CycleError("nmg_cycle_2d needs a 2D hierarchy")
    return nmg_cycle(nh, X, Y, level, Lp, trace)


def nmg_solve(nh: NeuralHierarchy, y, Lp: Optional[int] = None, tol: float = 1e-6,
              max_cycles: int = 1000) -> SolveReport:
    """Repeat cycles from ``x = 0``; raises on divergence (10x the initial residual, 5 cycles in a row)."""
    Lp = _check_Lp(nh, Lp)
    if max_cycles < 1:
        raise ValueError("max_cycles must be >= 1")

    def step(x):
        return _cycle(nh, x, y, 1, Lp, None)

    try:
        return _iterate(step, nh.base.op(1), y, tol, max_cycles, "nmg", diverge_factor=10.0, diverge_patience=5)
    except SolverError:
        raise
    except FloatingPointError as exc:
        raise SolverError(f"nmg: {exc}") from None


# --- diagnostics ---------------------------------------------------------------

@dataclass
class ErrorSpectra:
    """Accumulated errors ``e_0..e_L`` of one cycle from ``x = 0`` and their spectra.

    ``e_0 = x_true``, ``e_l = e_{l-1} - I_l^1 F'_l(h_l)`` for ``l < L'`` and
    the last entry is the error after the coarse correction.  ``spectra`` are
    centered DFT magnitudes; ``differences[l-1] = spectra[l-1] - spectra[l]``.
    """

    errors: List[np.ndarray]
    spectra: List[np.ndarray]

    @property
    def differences(self) -> List[np.ndarray]:
        return [self.spectra[i - 1] - self.spectra[i] for i in range(1, len(self.spectra))]

    def band_energy(self, index: int, band_level: int, L: int) -> float:
        mask = band_indicator(band_level, L, self.spectra[index].shape)
        return float(np.sum(self.spectra[index][mask] ** 2))


def _spectrum(v: np.ndarray) -> np.ndarray:
    return np.abs(center(np.fft.fftn(v), v.ndim))


def error_spectra(nh: NeuralHierarchy, x_true, y=None, Lp: Optional[int] = None) -> ErrorSpectra:
    x_true = np.asarray(x_true, dtype=float)
    if y is None:
        y = nh.base.op(1)(x_true)
    trace = CycleTrace(keep_cache=False)
    out = nmg_cycle(nh, np.zeros_like(x_true), y, 1, Lp, trace)
    errors = [x_true]
    for rec in trace.levels:
        errors.append(errors[-1] - nh.base.interpolate_to_fine(rec.hf, rec.level))
    errors.append(x_true - out)
    return ErrorSpectra(errors, [_spectrum(e) for e in errors])


def write_spectra_csv(path, spectra: ErrorSpectra) -> None:
    import csv

    specs = spectra.spectra
    names = [f"e_{l}" for l in range(len(specs))]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if specs[0].ndim == 1:
            phi = angular_frequencies(specs[0].shape[0])
            w.writerow(["phi"] + names)
            for j in range(len(phi)):
                w.writerow([repr(float(phi[j]))] + [repr(float(s[j])) for s in specs])
        else:
            p1 = angular_frequencies(specs[0].shape[0])
            p2 = angular_frequencies(specs[0].shape[1])
            diffs = spectra.differences
            w.writerow(["phi1", "phi2"] + names + [f"d_{l}" for l in range(1, len(specs))])
            for i in range(len(p1)):
                for j in range(len(p2)):
                    w.writerow([repr(float(p1[i])), repr(float(p2[j]))]
                               + [repr(float(s[i, j])) for s in specs]
                               + [repr(float(d[i, j])) for d in diffs])


# --- test hooks ----------------------------------------------------------------

class ZeroSmoother:
    """Smoother that always returns zeros (pure coarse-grid correction)."""

    def __init__(self, shape):
        self.shape = tuple(shape)

    params: dict = {}

    def __call__(self, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def forward(self, u):
        return self(u), None

    def backward(self, cache, g_out):
        return {}, np.zeros_like(g_out)


class ExactBandSmoother:
    """Returns ``F'^{-1}[(I - Pi) A^{-1} u]`` with ``Pi = P A_c^{-1} R A`` the A-orthogonal
    projector onto the range of interpolation.

    The coarse correction supplies ``Pi A^{-1} u`` exactly, so a cycle built
    from these smoothers solves the system in one pass.  On periodic grids
    ``(I - Pi) A^{-1} u`` has no constant component, which is the only bin
    where the level mask vanishes.
    """

    def __init__(self, base: LevelHierarchy, level: int, filtered: bool = True):
        self.base = base
        self.level = level
        self.shape = base.shape(level)
        self.filtered = filtered
        m = make_mask(level, base.L, self.shape, "level").natural
        self._inv = np.where(m > 0, 1.0 / np.where(m > 0, m, 1.0), 0.0)

    def __call__(self, u):
        base, l = self.base, self.level
        e = base.solve(l, u)
        tp = base.transfer(l)
        proj = tp.interpolate(base.solve(l + 1, tp.restrict(base.op(l)(e))))
        v = e - proj
        if not self.filtered:
            return v
        axes = _axes(len(self.shape))
        return np.real(np.fft.ifftn(self._inv * np.fft.fftn(v, axes=axes), axes=axes))


def exact_band_smoothers(base: LevelHierarchy, filtered: bool = True) -> Dict[int, ExactBandSmoother]:
    return {l: ExactBandSmoother(base, l, filtered) for l in range(1, base.L)}
