"""Image quality metrics, line profiles, and log-compressed image export.

dB values use 10*log10 throughout: every compared quantity here is a power.
"""

from __future__ import annotations

import math

import numpy as np

from .acquisition import ImageGrid, ROI, _atomic_write_bytes
from .compounding import PowerImage


def _roi_pixels(image: PowerImage, roi: ROI, min_pixels=16):
    if not roi.contains(image.grid):
        raise ValueError(f"ROI {roi.label or roi.center} not inside grid")
    mask = roi.mask(image.grid)
    if mask.sum() < min_pixels:
        raise ValueError(f"ROI {roi.label or roi.center} has fewer than "
                         f"{min_pixels} pixels")
    return image.values[mask]


def _check_disjoint(image, roi_a, roi_b):
    overlap = roi_a.mask(image.grid) & roi_b.mask(image.grid)
    if overlap.any():
        raise ValueError("ROIs overlap")


def compute_snr(image: PowerImage, roi_signal: ROI, roi_noise: ROI):
    """10 log10(mean power in the signal ROI / mean power in the noise ROI)."""
    _check_disjoint(image, roi_signal, roi_noise)
    mu_a = _roi_pixels(image, roi_signal).mean()
    mu_b = _roi_pixels(image, roi_noise).mean()
    if mu_b == 0:
        raise ValueError("empty noise region")
    return 10.0 * math.log10(mu_a / mu_b)


def compute_cnr(image: PowerImage, roi_signal: ROI, roi_background: ROI):
    """10 log10(|mu_A - mu_B| / sigma_B) between signal and background ROIs."""
    _check_disjoint(image, roi_signal, roi_background)
    mu_a = _roi_pixels(image, roi_signal).mean()
    background = _roi_pixels(image, roi_background)
    sigma_b = background.std()
    if sigma_b == 0:
        raise ValueError("zero background deviation")
    contrast = abs(mu_a - background.mean())
    if contrast == 0:
        raise ValueError("zero contrast")
    return 10.0 * math.log10(contrast / sigma_b)


def _bilinear(values, grid: ImageGrid, xq, zq):
    nx, nz = grid.nx, grid.nz
    fx = np.zeros_like(xq) if nx == 1 else (
        (xq - grid.x_min) / (grid.x_max - grid.x_min) * (nx - 1))
    fz = np.zeros_like(zq) if nz == 1 else (
        (zq - grid.z_min) / (grid.z_max - grid.z_min) * (nz - 1))
    ix = np.clip(np.floor(fx).astype(int), 0, max(nx - 2, 0))
    iz = np.clip(np.floor(fz).astype(int), 0, max(nz - 2, 0))
    tx = fx - ix
    tz = fz - iz
    ix1 = np.minimum(ix + 1, nx - 1)
    iz1 = np.minimum(iz + 1, nz - 1)
    return ((1 - tz) * ((1 - tx) * values[iz, ix] + tx * values[iz, ix1])
            + tz * ((1 - tx) * values[iz1, ix] + tx * values[iz1, ix1]))


def line_profile(image: PowerImage, p0, p1, n):
    """Power along the segment p0 -> p1, in dB relative to the image maximum.

    `n` equally spaced samples, bilinear interpolation.  Zero-power samples
    come out as -inf.
    """
    if n < 2:
        raise ValueError("n >= 2")
    grid = image.grid
    for (x, z) in (p0, p1):
        if not (grid.x_min <= x <= grid.x_max and grid.z_min <= z <= grid.z_max):
            raise ValueError(f"profile endpoint ({x}, {z}) outside grid")
    t = np.linspace(0.0, 1.0, n)
    xq = p0[0] + t * (p1[0] - p0[0])
    zq = p0[1] + t * (p1[1] - p0[1])
    samples = _bilinear(image.values, grid, xq, zq)
    peak = image.values.max()
    if peak <= 0:
        raise ValueError("zero image")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(samples / peak)


def to_gray(image: PowerImage, dynamic_range_db):
    """Log-compress to 8-bit gray: 0 dB -> 255, -DR dB -> 0, round half up."""
    if dynamic_range_db <= 0:
        raise ValueError("dynamic range must be positive")
    peak = image.values.max()
    if peak <= 0:
        raise ValueError("zero image")
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(image.values / peak)
    db = np.clip(db, -dynamic_range_db, 0.0)
    gray = np.floor((db + dynamic_range_db) / dynamic_range_db * 255.0 + 0.5)
    return np.clip(gray, 0, 255).astype(np.uint8)


def _write_pgm(gray, path):
    nz, nx = gray.shape
    header = f"P5\n{nx} {nz}\n255\n".encode()
    _atomic_write_bytes(path, header + gray.tobytes())


def export_image(image: PowerImage, dynamic_range_db, path):
    """Write a binary PGM (P5) of the log-compressed power image."""
    _write_pgm(to_gray(image, dynamic_range_db), path)


def export_mask(weights, path):
    """Write a suppressor mask as PGM, mapping weight 0 -> 0 and 1 -> 255."""
    w = np.asarray(weights, dtype=np.float64)
    gray = np.clip(np.floor(w * 255.0 + 0.5), 0, 255).astype(np.uint8)
    _write_pgm(gray, path)
