"""Clutter filtering and depth-noise equalization.

Filters run on channel data before aperture splitting and beamforming, so
every pipeline consumes the same flow dataset.  SVD truncation removes the
dominant (tissue) singular components of the Casorati matrix; rolling-mean
subtraction is the light-weight temporal high-pass alternative.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .acquisition import ChannelDataSet


@dataclass(frozen=True)
class SvdThresholds:
    """How many singular components to drop: indices < low_cut and >= high_cut."""

    low_cut: int
    high_cut: int | None = None

    def __post_init__(self):
        if self.low_cut < 0:
            raise ValueError("low_cut >= 0")
        if self.high_cut is not None and self.high_cut <= self.low_cut:
            raise ValueError("high_cut > low_cut")


@dataclass(frozen=True)
class RollingWindow:
    """Frame count of the rolling-mean subtraction window."""

    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("window length >= 1")


def svd_filter(ensemble, thresholds: SvdThresholds):
    """Truncate singular components of a (space, time) Casorati matrix.

    Components with index < low_cut or >= high_cut are zeroed; the output
    has the input's shape and dtype kind.
    """
    x = np.asarray(ensemble)
    if x.ndim != 2:
        raise ValueError("ensemble must be 2-D (space, time)")
    n_time = x.shape[1]
    if n_time < 2:
        raise ValueError("need >= 2 time samples")
    max_rank = min(x.shape)
    if thresholds.low_cut > n_time:
        raise ValueError("low_cut <= ensemble length")
    if thresholds.high_cut is not None and thresholds.high_cut > n_time:
        raise ValueError("high_cut <= ensemble length")
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    keep = np.ones(max_rank, dtype=bool)
    keep[:min(thresholds.low_cut, max_rank)] = False
    if thresholds.high_cut is not None:
        keep[thresholds.high_cut:] = False
    return (u[:, keep] * s[keep]) @ vt[keep]


def svd_singular_values(ensemble):
    """Singular values of the Casorati matrix, descending."""
    x = np.asarray(ensemble)
    return np.linalg.svd(x, compute_uv=False)


def svd_knee_heuristic(singular_values):
    """Rank at the knee of the log singular-value curve.

    Returns the interior index of maximum discrete curvature (second
    difference of log values); ties break to the lowest index, and the
    result is always >= 1.  Used as the default low_cut when none is given.
    """
    s = np.asarray(singular_values, dtype=np.float64)
    if s.size < 3:
        raise ValueError("need >= 3 singular values")
    if np.any(s <= 0):
        raise ValueError("singular values must be positive")
    if np.any(np.diff(s) > 0):
        raise ValueError("singular values must be descending")
    logs = np.log(s)
    curvature = logs[:-2] - 2.0 * logs[1:-1] + logs[2:]
    return int(np.argmax(curvature)) + 1


def rolling_subtraction(ensemble, window: RollingWindow):
    """Subtract the rolling mean of the trailing `window.length` frames.

    y'(t) = y(t) - mean(y[t-W+1 .. t]); the first W-1 frames use the partial
    history that exists, so output length equals input length.
    """
    x = np.asarray(ensemble, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("ensemble must be 2-D (space, time)")
    w = window.length
    if w > x.shape[1]:
        raise ValueError("window length <= ensemble length")
    cs = np.cumsum(x, axis=1)
    sums = cs.copy()
    sums[:, w:] = cs[:, w:] - cs[:, :-w]
    counts = np.minimum(np.arange(1, x.shape[1] + 1), w)
    return x - sums / counts


def rolling_frequency_response(window_length, freqs, frame_rate):
    """Complex response H(f) = 1 - (1/W) sum_j exp(-i 2 pi f j / frame_rate)."""
    freqs = np.asarray(freqs, dtype=np.float64)
    j = np.arange(window_length)
    phases = np.exp(-2j * np.pi * np.outer(freqs, j) / frame_rate)
    return 1.0 - phases.mean(axis=1)


def rolling_cutoff_frequency(window_length, frame_rate, n_grid=8192):
    """Half-power (-3 dB) frequency of the rolling-subtraction filter."""
    freqs = np.linspace(0.0, frame_rate / 2.0, n_grid)[1:]
    mag = np.abs(rolling_frequency_response(window_length, freqs, frame_rate))
    crossing = np.nonzero(mag >= 1.0 / np.sqrt(2.0))[0]
    if crossing.size == 0:
        return freqs[-1]
    return freqs[crossing[0]]


def window_for_cutoff(target_hz, frame_rate, max_window=64):
    """Window length whose -3 dB point lies nearest the target frequency."""
    if target_hz <= 0:
        raise ValueError("target cutoff > 0")
    best_w, best_err = 2, np.inf
    for w in range(2, max_window + 1):
        err = abs(rolling_cutoff_frequency(w, frame_rate) - target_hz)
        if err < best_err:
            best_w, best_err = w, err
    return best_w


def cutoff_velocity(f_cut, f0, c):
    """Axial velocity matching a Doppler cutoff: v = c * f_cut / (2 * f0)."""
    if f_cut <= 0 or f0 <= 0 or c <= 0:
        raise ValueError("f_cut, f0, c must all be positive")
    return c * f_cut / (2.0 * f0)


def filter_channel_data(data: ChannelDataSet, method="svd",
                        thresholds: SvdThresholds | None = None,
                        window: RollingWindow | None = None) -> ChannelDataSet:
    """Clutter-filter a dataset per angle, keeping its shape and config.

    For each angle the Casorati matrix is (element*sample, frame).  With
    method "svd" and no thresholds, low_cut comes from the knee heuristic.
    """
    if method == "none":
        return data
    frames, n_angles, n_elem, n_samp = data.samples.shape
    if frames < 2:
        raise ValueError("need >= 2 frames to clutter filter")
    out = np.empty_like(data.samples)
    for a in range(n_angles):
        cas = (np.asarray(data.samples[:, a], dtype=np.float64)
               .reshape(frames, n_elem * n_samp).T)
        if method == "svd":
            th = thresholds
            if th is None:
                s = svd_singular_values(cas)
                th = SvdThresholds(low_cut=svd_knee_heuristic(s))
            filtered = svd_filter(cas, th)
        elif method == "rolling":
            if window is None:
                raise ValueError("rolling method needs a RollingWindow")
            filtered = rolling_subtraction(cas, window)
        else:
            raise ValueError(f"unknown clutter method {method!r}")
        out[:, a] = filtered.T.reshape(frames, n_elem, n_samp)
    return replace(data, samples=out)


def tgc_equalize(power_frames, noise_band):
    """Flatten the depth profile of the noise floor.

    Per depth row, the noise floor is the median power over `noise_band`
    pixels at each lateral edge across all frames; each row is scaled by
    (global median noise) / (row noise), clamped to [0.1, 10].
    Returns (gain_curve, equalized_frames).
    """
    frames = np.asarray(power_frames, dtype=np.float64)
    single = frames.ndim == 2
    if single:
        frames = frames[None]
    if frames.ndim != 3:
        raise ValueError("power_frames must be (frames, nz, nx)")
    nx = frames.shape[2]
    if noise_band < 1 or 2 * noise_band > nx:
        raise ValueError("noise_band columns must exist on both edges")
    edges = np.concatenate([frames[:, :, :noise_band],
                            frames[:, :, nx - noise_band:]], axis=2)
    row_noise = np.median(edges, axis=(0, 2))
    if not np.any(row_noise > 0):
        raise ValueError("degenerate noise band (all zeros)")
    global_noise = np.median(row_noise)
    with np.errstate(divide="ignore"):
        gain = np.clip(global_noise / row_noise, 0.1, 10.0)
    gain = np.where(row_noise > 0, gain, 10.0)
    equalized = frames * gain[None, :, None]
    if single:
        equalized = equalized[0]
    return gain, equalized
