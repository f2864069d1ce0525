"""Delay-and-sum beamforming of RF channel data into complex pixel images.

Each trace is converted to its analytic signal first, then delayed with
linear interpolation and summed; all five image-formation pipelines share
this front end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import hilbert
from scipy.signal.windows import tukey as tukey_window

from .acquisition import AcquisitionConfig, ChannelDataSet, ImageGrid


@dataclass(frozen=True)
class ApodizationSpec:
    """Receive apodization: window over the full aperture plus f-number gating.

    f_number 0 means the full aperture contributes at every depth; otherwise
    an element contributes to a pixel iff |x - x_e| <= z / (2 f_number).
    """

    window: str = "rectangular"   # "rectangular", "hann", or "tukey"
    alpha: float = 0.25           # tukey taper
    f_number: float = 0.0

    def __post_init__(self):
        if self.window not in ("rectangular", "hann", "tukey"):
            raise ValueError(f"unknown window {self.window!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha in [0, 1]")
        if self.f_number < 0:
            raise ValueError("f_number >= 0")

    def weights(self, num_elements):
        if self.window == "hann":
            return np.hanning(num_elements)
        if self.window == "tukey":
            return tukey_window(num_elements, self.alpha)
        return np.ones(num_elements)


@dataclass(frozen=True)
class AnalyticImageStack:
    """Complex beamformed images indexed (frame, angle, z, x)."""

    grid: ImageGrid
    values: np.ndarray
    angle_list: tuple

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 4:
            raise ValueError("values must be (frame, angle, nz, nx)")
        if v.shape[1] != len(self.angle_list):
            raise ValueError("angle dimension disagrees with angle_list")
        if v.shape[2:] != self.grid.shape:
            raise ValueError("pixel dimensions disagree with grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")

    @property
    def n_frames(self):
        return self.values.shape[0]


def analytic_signal(trace, axis=-1):
    """Analytic signal via the one-sided-spectrum construction.

    The real part equals the input; the imaginary part is the Hilbert
    transform.  Length-1 inputs come back unchanged with zero imaginary part.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if trace.shape[axis] < 2:
        return trace.astype(np.complex128)
    return hilbert(trace, axis=axis)


class DasOperator:
    """Precomputed delay/apodization tables for one (config, grid, apod, t0).

    Building the tables costs one geometry pass per angle; beamforming a
    frame is then a pure gather + weighted sum, which keeps multi-frame
    stacks fast.
    """

    def __init__(self, config: AcquisitionConfig, grid: ImageGrid,
                 apod: ApodizationSpec, t0=0.0):
        self.config = config
        self.grid = grid
        self.apod = apod
        self.t0 = t0
        x, z = grid.meshgrid()
        self._px = x.ravel()
        self._pz = z.ravel()
        xe = config.element_positions()
        base = apod.weights(config.num_elements)[None, :]
        if apod.f_number > 0:
            accept = (np.abs(self._px[:, None] - xe[None, :])
                      <= self._pz[:, None] / (2.0 * apod.f_number))
            self._weights = base * accept
        else:
            self._weights = np.broadcast_to(
                base, (self._px.size, xe.size)).copy()
        self._per_angle = {}

    def _tables(self, angle_index):
        cached = self._per_angle.get(angle_index)
        if cached is not None:
            return cached
        cfg = self.config
        theta = cfg.angles[angle_index]
        xe = cfg.element_positions()
        c = cfg.sound_speed
        tx = (self._pz * math.cos(theta) + self._px * math.sin(theta)) / c
        rx = np.hypot(self._px[:, None] - xe[None, :], self._pz[:, None]) / c
        pos = (tx[:, None] + rx - self.t0) * cfg.sampling_frequency
        idx0 = np.floor(pos).astype(np.int64)
        frac = pos - idx0
        self._per_angle[angle_index] = (idx0, frac)
        return idx0, frac

    def beamform(self, traces, angle_index, element_mask=None,
                 normalize=True):
        """DAS one transmit: traces (elements, samples) -> image (nz, nx).

        Delays landing outside the sampled window contribute zero.  Pixels
        whose active-weight sum is zero come out zero.
        """
        analytic = analytic_signal(traces, axis=-1)
        return self.beamform_analytic(analytic, angle_index, element_mask,
                                      normalize)

    def beamform_analytic(self, analytic, angle_index, element_mask=None,
                          normalize=True):
        idx0, frac = self._tables(angle_index)
        n_samples = analytic.shape[-1]
        valid = (idx0 >= 0) & (idx0 < n_samples - 1)
        i0 = np.where(valid, idx0, 0)
        elem = np.arange(analytic.shape[0])[None, :]
        lo = analytic[elem, i0]
        hi = analytic[elem, i0 + 1]
        delayed = np.where(valid, lo * (1.0 - frac) + hi * frac, 0.0)

        weights = self._weights
        if element_mask is not None:
            element_mask = np.asarray(element_mask, dtype=bool)
            if element_mask.shape != (self.config.num_elements,):
                raise ValueError("element_mask length must equal num_elements")
            if not element_mask.any():
                raise ValueError("aperture fully masked")
            weights = weights * element_mask[None, :]

        image = (weights * delayed).sum(axis=1)
        if normalize:
            norm = weights.sum(axis=1)
            image = np.divide(image, norm, out=np.zeros_like(image),
                              where=norm > 0)
        return image.reshape(self.grid.shape)


def das_beamform(data: ChannelDataSet, grid: ImageGrid,
                 apod: ApodizationSpec = ApodizationSpec(),
                 frame=0, angle=0, element_mask=None, normalize=True):
    """Beamform one (frame, angle) of a dataset into a complex image."""
    op = DasOperator(data.config, grid, apod, data.t0)
    traces = np.asarray(data.samples[frame, angle], dtype=np.float64)
    return op.beamform(traces, angle, element_mask, normalize)


def beamform_stack(data: ChannelDataSet, grid: ImageGrid,
                   apod: ApodizationSpec = ApodizationSpec(),
                   element_mask=None, normalize=True) -> AnalyticImageStack:
    """Beamform every (frame, angle) of a dataset; deterministic."""
    op = DasOperator(data.config, grid, apod, data.t0)
    n_frames = data.n_frames
    n_angles = len(data.config.angles)
    out = np.empty((n_frames, n_angles) + grid.shape, dtype=np.complex128)
    for f in range(n_frames):
        for a in range(n_angles):
            traces = np.asarray(data.samples[f, a], dtype=np.float64)
            out[f, a] = op.beamform(traces, a, element_mask, normalize)
    return AnalyticImageStack(grid=grid, values=out,
                              angle_list=tuple(data.config.angles))
