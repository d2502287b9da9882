"""Frequency masks, spectral filters and multigrid frequency bands.

Two mask variants exist for every level ``l`` (1 <= l <= L-1):

* ``fine``: sampled on the finest grid; ``sqrt(|phi| / (pi/2^(l-1)))`` inside
  the band ``|phi| <= pi/2^(l-1)`` and zero outside.  Used in training losses.
* ``level``: the same profile sampled over the frequencies visible on the
  level-``l`` grid.  A level-``l`` bin ``phi`` corresponds to the fine
  frequency ``phi / 2^(l-1)``, so the profile reduces to ``sqrt(|phi|/pi)``.
  Used inside the filtered cycles.

In 2D ``|phi|`` is replaced by ``max(|phi_1|, |phi_2|)``.  Mask values are
stored in centered order (see :mod:`nmgkit.numerics`).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .numerics import angular_frequencies, center, uncenter

_EDGE_TOL = 1e-12


class MaskError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FrequencyMask:
    values: np.ndarray
    level: int
    variant: str

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def natural(self) -> np.ndarray:
        """Mask values in natural FFT order."""
        return _natural(self)


def _natural(mask: FrequencyMask) -> np.ndarray:
    cached = getattr(mask, "_nat", None)
    if cached is None:
        cached = uncenter(mask.values, mask.ndim)
        cached.setflags(write=False)
        object.__setattr__(mask, "_nat", cached)
    return cached


def radial_frequency(shape: tuple) -> np.ndarray:
    """``|phi|`` (1D) or ``max(|phi_1|, |phi_2|)`` (2D) on centered bins."""
    if len(shape) == 1:
        return np.abs(angular_frequencies(shape[0]))
    if len(shape) == 2:
        p1 = np.abs(angular_frequencies(shape[0]))
        p2 = np.abs(angular_frequencies(shape[1]))
        return np.maximum(p1[:, None], p2[None, :])
    raise MaskError("only 1D and 2D masks are supported")


@lru_cache(maxsize=None)
def _mask_values(l: int, shape: tuple, variant: str) -> np.ndarray:
    r = radial_frequency(shape)
    if variant == "fine":
        edge = np.pi / 2 ** (l - 1)
        inside = r <= edge * (1 + _EDGE_TOL)
        vals = np.where(inside, np.sqrt(np.minimum(r / edge, 1.0)), 0.0)
    elif variant == "level":
        vals = np.sqrt(r / np.pi)
    else:
        raise MaskError(f"unknown mask variant {variant!r}")
    vals.setflags(write=False)
    return vals


def _check_level(l: int, L: int) -> None:
    if not 1 <= l <= L - 1:
        raise MaskError(f"mask level {l} out of range 1..{L - 1}")


def make_mask_1d(l: int, L: int, n_target: int, variant: str = "fine") -> FrequencyMask:
    _check_level(l, L)
    return FrequencyMask(_mask_values(l, (int(n_target),), variant), l, variant)


def make_mask_2d(l: int, L: int, shape: tuple, variant: str = "fine") -> FrequencyMask:
    _check_level(l, L)
    return FrequencyMask(_mask_values(l, tuple(int(s) for s in shape), variant), l, variant)


def make_mask(l: int, L: int, shape: tuple, variant: str = "fine") -> FrequencyMask:
    return make_mask_1d(l, L, shape[0], variant) if len(shape) == 1 else make_mask_2d(l, L, shape, variant)


def band_indicator(l: int, L: int, shape: tuple) -> np.ndarray:
    """Boolean indicator (centered order) of the band assigned to level ``l`` on the fine grid."""
    if not 1 <= l <= L:
        raise MaskError(f"band level {l} out of range 1..{L}")
    r = radial_frequency(tuple(shape))
    hi = np.pi / 2 ** (l - 1) * (1 + _EDGE_TOL)
    if l == L:
        return r <= hi
    lo = np.pi / 2**l * (1 + _EDGE_TOL)
    return (r > lo) & (r <= hi)


def mask_support(l: int, L: int, shape: tuple) -> np.ndarray:
    """Bins where the fine-variant formula applies, ``|phi| <= pi/2^(l-1)``."""
    _check_level(l, L)
    return radial_frequency(tuple(shape)) <= np.pi / 2 ** (l - 1) * (1 + _EDGE_TOL)


def _dft(v, ndim):
    return np.fft.fftn(v, axes=tuple(range(-ndim, 0)))


def _idft(v, ndim):
    return np.fft.ifftn(v, axes=tuple(range(-ndim, 0)))


def filter_fine(v, mask: FrequencyMask) -> np.ndarray:
    """``m_l * DFT(v)`` as a centered complex spectrum."""
    if mask.variant != "fine":
        raise MaskError("filter_fine needs a fine-variant mask")
    v = np.asarray(v, dtype=float)
    if v.shape[v.ndim - mask.ndim:] != mask.shape:
        raise MaskError(f"input shape {v.shape} does not match mask {mask.shape}")
    return mask.values * center(_dft(v, mask.ndim), mask.ndim)


def filter_level(v, mask: FrequencyMask) -> np.ndarray:
    """``Re(IDFT(m_l' * DFT(v)))`` on the level grid."""
    if mask.variant != "level":
        raise MaskError("filter_level needs a level-variant mask")
    v = np.asarray(v, dtype=float)
    if v.shape[v.ndim - mask.ndim:] != mask.shape:
        raise MaskError(f"input shape {v.shape} does not match mask {mask.shape}")
    return np.real(_idft(mask.natural * _dft(v, mask.ndim), mask.ndim))


def write_masks_csv(path, L: int, shape: tuple, variant: str = "fine") -> Path:
    """Dump masks ``l = 1..L-1`` for plotting.

    1D: one row per bin, columns ``phi, m_1, ..., m_{L-1}``.
    2D: one row per bin, columns ``phi1, phi2, m_1, ...``.
    """
    path = Path(path)
    masks = [make_mask(l, L, shape, variant).values for l in range(1, L)]
    names = [f"m_{l}" for l in range(1, L)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if len(shape) == 1:
            w.writerow(["phi"] + names)
            phi = angular_frequencies(shape[0])
            for j in range(shape[0]):
                w.writerow([repr(float(phi[j]))] + [repr(float(m[j])) for m in masks])
        else:
            w.writerow(["phi1", "phi2"] + names)
            p1, p2 = angular_frequencies(shape[0]), angular_frequencies(shape[1])
            for i in range(shape[0]):
                for j in range(shape[1]):
                    w.writerow([repr(float(p1[i])), repr(float(p2[j]))] + [repr(float(m[i, j])) for m in masks])
    return path
