"""Angle compounding (coherent sum and FMAS), AM combination, and power images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acquisition import ImageGrid
from .beamformer import AnalyticImageStack

FMAS_VARIANTS = ("as_printed", "signed_sqrt")


@dataclass(frozen=True)
class PowerImage:
    """Nonnegative per-pixel power map, the end product of every pipeline."""

    grid: ImageGrid
    values: np.ndarray
    ensemble_length: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError("values shape disagrees with grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if np.any(v < 0):
            raise ValueError("values must be >= 0")
        object.__setattr__(self, "values", v)


def _stack_values(stack):
    if isinstance(stack, AnalyticImageStack):
        return stack.values
    return np.asarray(stack)


def coherent_compound(stack):
    """Sum per-angle complex images into one image per frame."""
    values = _stack_values(stack)
    return values.sum(axis=1)


def _check_variant(variant):
    if variant not in FMAS_VARIANTS:
        raise ValueError(f"unknown FMAS variant {variant!r}")


def fmas_compound(stack, variant="signed_sqrt"):
    """Cross-multiply per-angle images over all angle pairs, then sum.

    Operates on the real (RF) part of the per-angle images.  For each
    unordered pair a < b the pair term is sign(y_a y_b) |y_a y_b| in
    "as_printed" mode or sign(y_a y_b) sqrt(|y_a y_b|) in "signed_sqrt"
    mode.  Returns one real image per frame.
    """
    _check_variant(variant)
    values = _stack_values(stack)
    y = np.real(values)
    n_angles = y.shape[1]
    if n_angles < 2:
        raise ValueError("FMAS requires >= 2 angles")
    out = np.zeros((y.shape[0],) + y.shape[2:], dtype=np.float64)
    for a in range(n_angles - 1):
        for b in range(a + 1, n_angles):
            prod = y[:, a] * y[:, b]
            if variant == "as_printed":
                out += prod
            else:
                out += np.sign(prod) * np.sqrt(np.abs(prod))
    return out


def am_combine(half1, full, half2):
    """Amplitude-modulation contrast combination: full - half1 - half2."""
    half1 = np.asarray(half1)
    full = np.asarray(full)
    half2 = np.asarray(half2)
    if not (half1.shape == full.shape == half2.shape):
        raise ValueError("AM traces must share one shape")
    return full - half1 - half2


def power_doppler(frames, ensemble=None, grid=None) -> PowerImage:
    """Lag-0 autocorrelation: pixel-wise mean of |value|^2 over the ensemble.

    `frames` is (n_frames, nz, nx), real or complex; `ensemble` selects
    frames (slice, range, or index array; default all).
    """
    frames = np.asarray(frames)
    if ensemble is None:
        selected = frames
    else:
        if isinstance(ensemble, slice):
            selected = frames[ensemble]
        else:
            selected = frames[np.asarray(list(ensemble), dtype=np.intp)]
    if selected.shape[0] == 0:
        raise ValueError("empty ensemble")
    power = np.mean(np.abs(selected) ** 2, axis=0)
    if grid is None:
        grid = _implicit_grid(power.shape)
    return PowerImage(grid=grid, values=power,
                      ensemble_length=selected.shape[0])


def _implicit_grid(shape):
    """Unit-spaced grid for images handled without acquisition geometry."""
    nz, nx = shape
    return ImageGrid(0.0, float(max(nx - 1, 1)), 0.0, float(max(nz - 1, 1)),
                     nx, nz)
