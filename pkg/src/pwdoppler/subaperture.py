"""Sub-aperture processing: mask generation, ensemble cross-correlation,
the phase-based sidelobe suppressor, ASAP-FMAS, and the SAMAS combination.

Splitting the receive aperture into two interleaved halves yields two images
with common backscatter but independent electronic noise; correlating them
over an ensemble suppresses the noise.  The interleaving undersamples the
aperture, so grating lobes appear — but they arrive anti-correlated (phase
pi) between the halves, which is what the suppressor keys on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acquisition import ImageGrid
from .compounding import (PowerImage, _implicit_grid, coherent_compound,
                          fmas_compound)

_PATTERN_NAMES = {"[1 0]": 1, "[1 1 0 0]": 2, "[1 1 1 1 0 0 0 0]": 4,
                  "10": 1, "1100": 2, "11110000": 4}


@dataclass(frozen=True)
class AperturePattern:
    """Periodic element pairing: run_length ones then run_length zeros."""

    run_length: int = 1

    def __post_init__(self):
        if self.run_length < 1:
            raise ValueError("run_length >= 1")

    @classmethod
    def from_name(cls, name):
        """Accept '[1 0]'-style names, '1100'-style strings, or run lengths."""
        if isinstance(name, int):
            return cls(name)
        key = str(name).strip()
        if key in _PATTERN_NAMES:
            return cls(_PATTERN_NAMES[key])
        raise ValueError(f"unknown aperture pattern {name!r}")

    @property
    def name(self):
        k = self.run_length
        return "[" + " ".join(["1"] * k + ["0"] * k) + "]"

    @property
    def short_name(self):
        return "1" * self.run_length + "0" * self.run_length


@dataclass(frozen=True)
class CorrelationImage:
    """Pixel-wise ensemble correlation of two image sequences."""

    grid: ImageGrid
    values: np.ndarray          # complex (or real for real inputs)
    ensemble_length: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")


@dataclass(frozen=True)
class SuppressorMask:
    """Per-pixel weight in [0, 1] derived from the correlation phase."""

    grid: ImageGrid
    weights: np.ndarray
    mode: str

    def __post_init__(self):
        w = np.asarray(self.weights)
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights within [0, 1]")
        if self.mode == "binary" and not np.all((w == 0) | (w == 1)):
            raise ValueError("binary mask weights in {0, 1}")


def split_aperture(num_elements, pattern: AperturePattern):
    """Two complementary boolean masks following the periodic pattern.

    mask1 selects the "one" runs, mask2 the complement; together they cover
    every element, and counts differ by at most run_length.
    """
    k = pattern.run_length
    if num_elements < 2 * k:
        raise ValueError("num_elements >= 2 * run_length")
    blocks = np.arange(num_elements) // k
    mask1 = blocks % 2 == 0
    return mask1, ~mask1


def _select_ensemble(frames, ensemble):
    frames = np.asarray(frames)
    if ensemble is None:
        return frames
    if isinstance(ensemble, slice):
        return frames[ensemble]
    return frames[np.asarray(list(ensemble), dtype=np.intp)]


def asap_correlate(frames1, frames2, ensemble=None,
                   grid=None) -> CorrelationImage:
    """R = mean over the ensemble of y1(t) * conj(y2(t)), pixel-wise."""
    frames1 = np.asarray(frames1)
    frames2 = np.asarray(frames2)
    if frames1.shape != frames2.shape:
        raise ValueError("grid mismatch between sub-aperture image sequences")
    y1 = _select_ensemble(frames1, ensemble)
    y2 = _select_ensemble(frames2, ensemble)
    if y1.shape[0] == 0:
        raise ValueError("empty ensemble")
    values = np.mean(y1 * np.conj(y2), axis=0)
    if grid is None:
        grid = _implicit_grid(values.shape)
    return CorrelationImage(grid=grid, values=values,
                            ensemble_length=y1.shape[0])


def asap_power(R: CorrelationImage, mode="positive_real") -> PowerImage:
    """Display power of a correlation image.

    "positive_real" (default) clips Re(R) at zero, so anti-correlated pixels
    carry no energy; "magnitude" keeps |R| and is the unsuppressed view used
    for grating-lobe comparisons.
    """
    if mode == "positive_real":
        values = np.maximum(np.real(R.values), 0.0)
    elif mode == "magnitude":
        values = np.abs(R.values)
    else:
        raise ValueError(f"unknown asap power mode {mode!r}")
    return PowerImage(grid=R.grid, values=values,
                      ensemble_length=R.ensemble_length)


def sidelobe_suppressor(R: CorrelationImage, mode="binary") -> SuppressorMask:
    """Per-pixel weight from the correlation phase.

    binary: 1 where Re(R) > 0, else 0.  smooth: max(0, cos(arg R)).
    R exactly zero maps to 0 in both modes.
    """
    values = np.asarray(R.values)
    re = np.real(values)
    if mode == "binary":
        weights = (re > 0).astype(np.float64)
    elif mode == "smooth":
        mag = np.abs(values)
        weights = np.zeros(values.shape, dtype=np.float64)
        np.divide(re, mag, out=weights, where=mag > 0)
        weights = np.maximum(weights, 0.0)
    else:
        raise ValueError(f"unknown suppressor mode {mode!r}")
    return SuppressorMask(grid=R.grid, weights=weights, mode=mode)


def asap_fmas(stack1, stack2, variant="signed_sqrt", ensemble=None,
              grid=None) -> CorrelationImage:
    """FMAS each sub-aperture stack over angles, then correlate over frames.

    Both stacks are (frame, angle, nz, nx); the FMAS images are real, so the
    resulting correlation is real-valued.
    """
    f1 = fmas_compound(stack1, variant)
    f2 = fmas_compound(stack2, variant)
    return asap_correlate(f1, f2, ensemble, grid)


def samas(stack1, stack2, variant="signed_sqrt", ensemble=None,
          suppressor_mode="binary", grid=None) -> PowerImage:
    """Suppressor-gated ASAP-FMAS power.

    The plain ASAP correlation of the coherently-compounded sub-aperture
    frames supplies the phase for the sidelobe suppressor; the mask then
    gates the positive part of the ASAP-FMAS correlation.  Both branches
    consume the same beamformed stacks, so no extra beamforming happens
    here.
    """
    cc1 = coherent_compound(stack1)
    cc2 = coherent_compound(stack2)
    r_asap = asap_correlate(cc1, cc2, ensemble, grid)
    mask = sidelobe_suppressor(r_asap, suppressor_mode)
    r_af = asap_fmas(stack1, stack2, variant, ensemble, grid)
    values = mask.weights * np.maximum(np.real(r_af.values), 0.0)
    return PowerImage(grid=r_af.grid, values=values,
                      ensemble_length=r_af.ensemble_length)


def grating_lobe_directions(sin_theta0, wavelength, pitch,
                            pattern: AperturePattern):
    """Predicted grating-lobe directions sin(theta) for a split aperture.

    The mask period is 2 * run_length * pitch, so first-order lobes sit at
    sin(theta0) +- wavelength / (2 * run_length * pitch); only values within
    [-1, 1] are returned.
    """
    effective_pitch = 2 * pattern.run_length * pitch
    offset = wavelength / effective_pitch
    return [s for s in (sin_theta0 - offset, sin_theta0 + offset)
            if -1.0 <= s <= 1.0]
