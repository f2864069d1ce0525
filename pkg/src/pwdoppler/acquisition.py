"""Acquisition configuration, pixel grids, ROIs, and the raw channel-data container.

Coordinate convention used throughout: x is lateral along the array, z is
depth, origin at the array center.  Element i sits at
x_i = (i - (N - 1) / 2) * pitch, z = 0.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

DATASET_MAGIC = b"SBF1"

# Header layout of the dataset container, after the 4-byte magic:
#   u32 x 4   frames, angles, elements, samples
#   f64 x 7   pitch, center_frequency, sampling_frequency, sound_speed,
#             t0, prf, frame_rate
#   f64 x 2   transmit_frequency, tukey_alpha
#   u32       angle count (must match the dims field)
#   f64 x n   steering angles in radians
# followed by the sample tensor as little-endian f32 in
# (frame, angle, element, sample) row-major order.
_DIMS = struct.Struct("<4I")
_F64_FIELDS = struct.Struct("<9d")
_U32 = struct.Struct("<I")


class FormatError(Exception):
    """A dataset or text file does not match its declared layout."""


@dataclass(frozen=True)
class AcquisitionConfig:
    """Transmit/receive parameters of one plane-wave acquisition sequence."""

    num_elements: int
    pitch: float                 # element spacing [m]
    center_frequency: float      # probe center frequency [Hz]
    transmit_frequency: float    # transmitted pulse frequency [Hz]
    sampling_frequency: float    # RF sampling rate [Hz]
    sound_speed: float           # [m/s]
    angles: tuple                # steering angles [rad], strictly increasing
    prf: float                   # pulse repetition frequency [Hz]
    frame_rate: float            # compounded frame rate [Hz]
    tukey_alpha: float = 0.25    # transmit apodization taper in [0, 1]

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))

    def element_positions(self):
        """Lateral element center positions [m], symmetric about x = 0."""
        n = self.num_elements
        return (np.arange(n) - (n - 1) / 2.0) * self.pitch

    @property
    def wavelength(self):
        """Wavelength of the transmitted pulse [m]."""
        return self.sound_speed / self.transmit_frequency


def validate_config(config: AcquisitionConfig) -> AcquisitionConfig:
    """Return ``config`` unchanged iff every invariant holds.

    Raises ValueError naming the first violated invariant.
    """
    if config.num_elements < 2:
        raise ValueError("num_elements >= 2")
    if config.pitch <= 0:
        raise ValueError("pitch > 0")
    if config.sampling_frequency <= 2 * config.center_frequency:
        raise ValueError("sampling_frequency > 2 * center_frequency")
    angles = config.angles
    if len(angles) == 0:
        raise ValueError("angles non-empty")
    if any(b <= a for a, b in zip(angles, angles[1:])):
        raise ValueError("angles not increasing")
    if any(not (-math.pi / 4 < a < math.pi / 4) for a in angles):
        raise ValueError("angles within (-pi/4, pi/4)")
    if config.prf < config.frame_rate * len(angles):
        raise ValueError("prf >= frame_rate * len(angles)")
    if not 0.0 <= config.tukey_alpha <= 1.0:
        raise ValueError("tukey_alpha in [0, 1]")
    return config


def desk_config(num_elements=64, n_angles=5, span_deg=10.0):
    """Small configuration sized for seconds-scale runs.

    64 elements at 0.2 mm pitch, 5 MHz transmit sampled at 20 MHz,
    5 angles spanning 10 degrees, 150 fps.
    """
    half = math.radians(span_deg) / 2.0
    return validate_config(AcquisitionConfig(
        num_elements=num_elements,
        pitch=0.2e-3,
        center_frequency=5e6,
        transmit_frequency=5e6,
        sampling_frequency=20e6,
        sound_speed=1540.0,
        angles=tuple(np.linspace(-half, half, n_angles)),
        prf=10e3,
        frame_rate=150.0,
        tukey_alpha=0.25,
    ))


@dataclass(frozen=True)
class ImageGrid:
    """Rectangular pixel lattice for beamformed images."""

    x_min: float
    x_max: float
    z_min: float
    z_max: float
    nx: int
    nz: int

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise ValueError("nx, nz >= 1")
        if self.x_max <= self.x_min:
            raise ValueError("x_max > x_min")
        if self.z_max <= self.z_min:
            raise ValueError("z_max > z_min")
        if self.z_min < 0:
            raise ValueError("z_min >= 0")

    @property
    def shape(self):
        """(nz, nx) — images are stored depth-major."""
        return (self.nz, self.nx)

    def x_axis(self):
        return np.linspace(self.x_min, self.x_max, self.nx)

    def z_axis(self):
        return np.linspace(self.z_min, self.z_max, self.nz)

    def meshgrid(self):
        """Pixel center coordinates as (X, Z), each shaped (nz, nx)."""
        return np.meshgrid(self.x_axis(), self.z_axis())


@dataclass(frozen=True)
class ROI:
    """Rectangular or elliptical region of interest in image coordinates."""

    shape: str                  # "rectangle" or "ellipse"
    center: tuple               # (x, z) [m]
    half_extents: tuple         # (dx, dz) [m]
    label: str = ""

    def __post_init__(self):
        if self.shape not in ("rectangle", "ellipse"):
            raise ValueError(f"unknown ROI shape {self.shape!r}")
        if self.half_extents[0] <= 0 or self.half_extents[1] <= 0:
            raise ValueError("half_extents > 0")

    def contains(self, grid: ImageGrid) -> bool:
        cx, cz = self.center
        dx, dz = self.half_extents
        return (cx - dx >= grid.x_min and cx + dx <= grid.x_max
                and cz - dz >= grid.z_min and cz + dz <= grid.z_max)

    def mask(self, grid: ImageGrid):
        """Boolean pixel mask of shape (nz, nx)."""
        x, z = grid.meshgrid()
        cx, cz = self.center
        dx, dz = self.half_extents
        if self.shape == "rectangle":
            return (np.abs(x - cx) <= dx) & (np.abs(z - cz) <= dz)
        return ((x - cx) / dx) ** 2 + ((z - cz) / dz) ** 2 <= 1.0


@dataclass(frozen=True)
class ChannelDataSet:
    """Raw RF traces indexed by (frame, angle, element, sample).

    Samples are stored as float32, matching the on-disk container exactly,
    so write/read round-trips are bit-exact.  t0 is the time of the first
    sample relative to the transmit event.
    """

    config: AcquisitionConfig
    samples: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32)
        if s.ndim != 4:
            raise ValueError("samples must be (frame, angle, element, sample)")
        if s.shape[1] != len(self.config.angles):
            raise ValueError("angle dimension disagrees with config")
        if s.shape[2] != self.config.num_elements:
            raise ValueError("element dimension disagrees with config")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", np.ascontiguousarray(s))

    @property
    def n_frames(self):
        return self.samples.shape[0]

    @property
    def sample_count(self):
        return self.samples.shape[3]


def _atomic_write_bytes(path, payload: bytes):
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(data: ChannelDataSet, path):
    """Serialize a ChannelDataSet to the SBF1 binary container."""
    cfg = data.config
    frames, angles, elements, samples = data.samples.shape
    parts = [DATASET_MAGIC]
    parts.append(_DIMS.pack(frames, angles, elements, samples))
    parts.append(_F64_FIELDS.pack(
        cfg.pitch, cfg.center_frequency, cfg.sampling_frequency,
        cfg.sound_speed, data.t0, cfg.prf, cfg.frame_rate,
        cfg.transmit_frequency, cfg.tukey_alpha,
    ))
    parts.append(_U32.pack(len(cfg.angles)))
    parts.append(np.asarray(cfg.angles, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(data.samples, dtype="<f4").tobytes())
    _atomic_write_bytes(path, b"".join(parts))


def read_dataset(path) -> ChannelDataSet:
    """Read an SBF1 container written by :func:`write_dataset`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DATASET_MAGIC:
        raise FormatError("bad magic, not an SBF1 dataset")
    off = 4
    try:
        frames, angles, elements, samples = _DIMS.unpack_from(raw, off)
        off += _DIMS.size
        (pitch, fc, fs, c, t0, prf, frame_rate,
         tf, tukey_alpha) = _F64_FIELDS.unpack_from(raw, off)
        off += _F64_FIELDS.size
        (n_angles,) = _U32.unpack_from(raw, off)
        off += _U32.size
    except struct.error as err:
        raise FormatError("truncated header") from err
    if n_angles != angles:
        raise FormatError("angle count disagrees with dims field")
    angle_bytes = 8 * n_angles
    if len(raw) < off + angle_bytes:
        raise FormatError("truncated angle table")
    angle_values = np.frombuffer(raw, dtype="<f8", count=n_angles, offset=off)
    off += angle_bytes
    expected = frames * angles * elements * samples
    tensor = np.frombuffer(raw, dtype="<f4", offset=off)
    if tensor.size != expected:
        raise FormatError(
            f"tensor size {tensor.size} disagrees with header dims {expected}")
    config = AcquisitionConfig(
        num_elements=elements,
        pitch=pitch,
        center_frequency=fc,
        transmit_frequency=tf,
        sampling_frequency=fs,
        sound_speed=c,
        angles=tuple(angle_values),
        prf=prf,
        frame_rate=frame_rate,
        tukey_alpha=tukey_alpha,
    )
    shaped = tensor.reshape(frames, angles, elements, samples)
    return ChannelDataSet(config=config, samples=shaped, t0=t0)


# Flat `key = value` text files for configs.

_CONFIG_FLOAT_KEYS = ("pitch", "center_frequency", "transmit_frequency",
                      "sampling_frequency", "sound_speed", "prf",
                      "frame_rate", "tukey_alpha")


def write_config_file(config: AcquisitionConfig, path):
    lines = [f"num_elements = {config.num_elements}"]
    for key in _CONFIG_FLOAT_KEYS:
        lines.append(f"{key} = {getattr(config, key)!r}")
    lines.append("angles = " + ", ".join(repr(a) for a in config.angles))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def parse_key_value_lines(text):
    """Parse `key = value` lines, skipping blanks and # comments."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path) -> AcquisitionConfig:
    with open(path) as fh:
        pairs = parse_key_value_lines(fh.read())
    try:
        kwargs = {"num_elements": int(pairs["num_elements"]),
                  "angles": tuple(float(v) for v in pairs["angles"].split(","))}
        for key in _CONFIG_FLOAT_KEYS:
            kwargs[key] = float(pairs[key])
    except KeyError as err:
        raise FormatError(f"missing config key {err.args[0]!r}") from err
    except ValueError as err:
        raise FormatError(f"malformed config value: {err}") from err
    return AcquisitionConfig(**kwargs)


def apply_config_overrides(config: AcquisitionConfig, overrides):
    """Apply `key=value` string overrides to a config, returning a new one."""
    kwargs = {}
    for item in overrides:
        key, _, value = item.partition("=")
        key = key.strip()
        if key == "num_elements":
            kwargs[key] = int(value)
        elif key == "angles":
            kwargs[key] = tuple(float(v) for v in value.split(","))
        elif key in _CONFIG_FLOAT_KEYS:
            kwargs[key] = float(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return replace(config, **kwargs)
