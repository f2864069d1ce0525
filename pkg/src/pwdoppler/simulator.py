"""Synthetic multi-angle RF channel data from point-scatterer scenes.

Far-field ray model: each scatterer returns a band-limited pulse echo at the
plane-wave arrival time plus the element round-trip time.  Microbubble-like
nonlinearity is a power law on transmit amplitude (echo ~ amplitude^gamma),
which is all the amplitude-modulation pipelines consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .acquisition import (AcquisitionConfig, ChannelDataSet, ImageGrid, ROI,
                          FormatError, _atomic_write_bytes, desk_config,
                          parse_key_value_lines, validate_config)


@dataclass(frozen=True)
class Scatterer:
    position: tuple          # (x, z) [m], z > 0
    amplitude: float         # reflectivity
    velocity: tuple = (0.0, 0.0)   # (vx, vz) [m/s]
    nonlinearity: float = 1.0      # gamma >= 1; echo ~ tx_amplitude**gamma

    def __post_init__(self):
        if self.position[1] <= 0:
            raise ValueError("scatterer depth z > 0")
        if not math.isfinite(self.amplitude):
            raise ValueError("amplitude finite")
        if self.nonlinearity < 1.0:
            raise ValueError("nonlinearity gamma >= 1")


@dataclass(frozen=True)
class PhantomScene:
    scatterers: tuple
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma >= 0")


@dataclass(frozen=True)
class PulseSpec:
    """Band-limited transmit pulse: windowed tone burst centered at t = 0."""

    center_frequency: float
    cycles: float = 3.0
    envelope: str = "gaussian"   # "gaussian" or "hann"

    def __post_init__(self):
        if self.cycles <= 0:
            raise ValueError("cycles > 0")
        if self.envelope not in ("gaussian", "hann"):
            raise ValueError(f"unknown envelope {self.envelope!r}")

    @property
    def duration(self):
        return self.cycles / self.center_frequency

    def waveform(self, t):
        """Evaluate the pulse at times t [s]; zero outside +-duration/2."""
        t = np.asarray(t, dtype=np.float64)
        half = self.duration / 2.0
        inside = np.abs(t) <= half
        if self.envelope == "hann":
            env = np.cos(np.pi * t / self.duration) ** 2
        else:
            # Gaussian with 3 sigma at the nominal half-duration, truncated
            # there so echo support is strictly bounded.
            sigma = self.duration / 6.0
            env = np.exp(-0.5 * (t / sigma) ** 2)
        return np.where(inside, env * np.cos(2 * np.pi * self.center_frequency * t), 0.0)


def _transmit_rng(scene: PhantomScene, noise_key):
    """Independent noise stream per (seed, frame, angle, pulse) tuple."""
    entropy = [int(scene.rng_seed) & 0xFFFFFFFF] + [int(k) for k in noise_key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _tukey_taper(frac, alpha):
    """Continuous Tukey window on [0, 1]; zero outside."""
    frac = np.asarray(frac, dtype=np.float64)
    w = np.zeros_like(frac)
    inside = (frac >= 0.0) & (frac <= 1.0)
    if alpha <= 0:
        return np.where(inside, 1.0, 0.0)
    lo = inside & (frac < alpha / 2.0)
    hi = inside & (frac > 1.0 - alpha / 2.0)
    flat = inside & ~lo & ~hi
    w[flat] = 1.0
    w[lo] = 0.5 * (1.0 + np.cos(np.pi * (2.0 * frac[lo] / alpha - 1.0)))
    w[hi] = 0.5 * (1.0 + np.cos(np.pi * (2.0 * (1.0 - frac[hi]) / alpha - 1.0)))
    return w


def transmit_taper_weights(scene_x, scene_z, config: AcquisitionConfig, angle):
    """Plane-wave field amplitude seen by scatterers under Tukey transmit apodization.

    The ray through (x, z) at steering angle theta originates on the aperture
    at u = x - z tan(theta); the weight is the Tukey taper at that origin,
    zero for rays missing the aperture.
    """
    positions = config.element_positions()
    x0, x1 = positions[0], positions[-1]
    u = np.asarray(scene_x) - np.asarray(scene_z) * math.tan(angle)
    frac = (u - x0) / (x1 - x0)
    return _tukey_taper(frac, config.tukey_alpha)


def echo_delays(scene_x, scene_z, config: AcquisitionConfig, angle):
    """Two-way arrival time (S, E): plane-wave leg plus element return leg."""
    xs = np.asarray(scene_x, dtype=np.float64)[:, None]
    zs = np.asarray(scene_z, dtype=np.float64)[:, None]
    xe = config.element_positions()[None, :]
    c = config.sound_speed
    tx = (zs * math.cos(angle) + xs * math.sin(angle)) / c
    rx = np.hypot(xs - xe, zs) / c
    return tx + rx


def required_sample_count(scene: PhantomScene, config: AcquisitionConfig,
                          pulse: PulseSpec, duration=0.0, t0=0.0, margin=8):
    """Sample count covering every echo over `duration` seconds of motion."""
    latest = 0.0
    for s in scene.scatterers:
        for dt in (0.0, duration):
            x = s.position[0] + s.velocity[0] * dt
            z = max(s.position[1] + s.velocity[1] * dt, 1e-6)
            for angle in config.angles:
                tau = echo_delays([x], [z], config, angle).max()
                latest = max(latest, tau)
    needed = (latest + pulse.duration / 2.0 - t0) * config.sampling_frequency
    return int(math.ceil(needed)) + margin


def sample_count_for_grid(config: AcquisitionConfig, grid, pulse: PulseSpec,
                          t0=0.0, margin=8):
    """Sample count so every pixel of `grid` maps inside the trace window.

    Auto-sizing by scatterers alone can leave deep grid pixels beyond the
    recorded window, where delay-and-sum returns zeros; use this when the
    beamforming grid is deeper than the scatterers.
    """
    corners_x = (grid.x_min, grid.x_max)
    corners_z = (grid.z_min, grid.z_max)
    latest = 0.0
    for x in corners_x:
        for z in corners_z:
            for angle in config.angles:
                tau = echo_delays([x], [z], config, angle).max()
                latest = max(latest, tau)
    needed = (latest + pulse.duration / 2.0 - t0) * config.sampling_frequency
    return int(math.ceil(needed)) + margin


def synthesize_transmit(scene: PhantomScene, config: AcquisitionConfig,
                        pulse: PulseSpec, angle, tx_amplitude,
                        sample_count, t0=0.0, noise_key=()):
    """One plane-wave transmit: per-element RF traces, shape (elements, samples).

    Echo amplitude is amplitude * tx_amplitude**gamma * taper(scatterer),
    deposited at the exact two-way delay (sub-sample accurate).  White
    Gaussian noise of sd noise_sigma is added per sample, deterministic for
    a given (rng_seed, noise_key).
    """
    fs = config.sampling_frequency
    n_elem = config.num_elements
    traces = np.zeros((n_elem, sample_count), dtype=np.float64)
    t_end = t0 + (sample_count - 1) / fs

    if scene.scatterers:
        xs = np.array([s.position[0] for s in scene.scatterers])
        zs = np.array([s.position[1] for s in scene.scatterers])
        amps = np.array([s.amplitude for s in scene.scatterers])
        gammas = np.array([s.nonlinearity for s in scene.scatterers])

        tau = echo_delays(xs, zs, config, angle)          # (S, E)
        half = pulse.duration / 2.0
        early = tau.min(axis=1) - half
        late = tau.max(axis=1) + half
        bad = np.nonzero((early < t0) | (late > t_end))[0]
        if bad.size:
            i = int(bad[0])
            raise ValueError(
                f"scatterer {i} at (x={xs[i]:.4g} m, z={zs[i]:.4g} m): echo span "
                f"[{early[i]:.3e}, {late[i]:.3e}] s outside sampled window "
                f"[{t0:.3e}, {t_end:.3e}] s")

        taper = transmit_taper_weights(xs, zs, config, angle)
        strengths = amps * np.power(tx_amplitude, gammas) * taper  # (S,)

        active = strengths != 0.0
        if np.any(active):
            tau_a = tau[active]
            str_a = strengths[active]
            half_w = int(math.ceil(half * fs)) + 1
            offsets = np.arange(-half_w, half_w + 1)
            center = np.rint((tau_a - t0) * fs).astype(np.int64)
            idx = center[:, :, None] + offsets[None, None, :]      # (S, E, W)
            t_rel = t0 + idx / fs - tau_a[:, :, None]
            vals = str_a[:, None, None] * pulse.waveform(t_rel)
            valid = (idx >= 0) & (idx < sample_count)
            e_idx = np.broadcast_to(
                np.arange(n_elem)[None, :, None], idx.shape)
            flat = e_idx[valid] * sample_count + idx[valid]
            traces = np.bincount(flat, weights=vals[valid],
                                 minlength=n_elem * sample_count)
            traces = traces.reshape(n_elem, sample_count)

    if scene.noise_sigma > 0:
        rng = _transmit_rng(scene, noise_key)
        traces = traces + rng.normal(0.0, scene.noise_sigma,
                                     size=(n_elem, sample_count))
    return traces


def synthesize_am_triplet(scene, config, pulse, angle, sample_count,
                          t0=0.0, noise_key=()):
    """Half/full/half amplitude-modulation pulse triplet at one angle.

    The three pulses see the same scene instant but draw independent noise.
    """
    key = tuple(noise_key)
    half1 = synthesize_transmit(scene, config, pulse, angle, 0.5,
                                sample_count, t0, key + (0,))
    full = synthesize_transmit(scene, config, pulse, angle, 1.0,
                               sample_count, t0, key + (1,))
    half2 = synthesize_transmit(scene, config, pulse, angle, 0.5,
                                sample_count, t0, key + (2,))
    return half1, full, half2


def advance_scene(scene: PhantomScene, dt) -> PhantomScene:
    """Move every scatterer by velocity * dt.

    The seed is left untouched: noise streams are keyed by (frame, angle,
    pulse) indices instead, so advancing twice by dt/2 equals advancing once
    by dt, field for field.
    """
    if dt < 0:
        raise ValueError("dt >= 0")
    moved = tuple(
        replace(s, position=(s.position[0] + s.velocity[0] * dt,
                             s.position[1] + s.velocity[1] * dt))
        for s in scene.scatterers)
    return replace(scene, scatterers=moved)


def synthesize_sequence(scene: PhantomScene, config: AcquisitionConfig,
                        pulse: PulseSpec, n_frames, contrast_mode="linear",
                        sample_count=None, t0=0.0, intra_frame_motion=True,
                        tx_amplitude=1.0) -> ChannelDataSet:
    """Simulate a full acquisition: frames x angles of RF channel data.

    In "am" mode each angle fires a half/full/half triplet and the stored
    trace is the combination full - half1 - half2.  The scene advances by
    1/prf between the angles of a frame (unless intra_frame_motion is off)
    and frame starts are spaced 1/frame_rate apart.
    """
    validate_config(config)
    if contrast_mode not in ("linear", "am"):
        raise ValueError(f"unknown contrast_mode {contrast_mode!r}")
    if n_frames < 0:
        raise ValueError("n_frames >= 0")
    n_angles = len(config.angles)
    if sample_count is None:
        duration = n_frames / config.frame_rate if n_frames else 0.0
        sample_count = required_sample_count(scene, config, pulse,
                                             duration, t0)
    out = np.empty((n_frames, n_angles, config.num_elements, sample_count),
                   dtype=np.float32)
    inter_angle = 1.0 / config.prf
    frame_period = 1.0 / config.frame_rate
    current = scene
    for f in range(n_frames):
        frame_start = current
        for a, angle in enumerate(config.angles):
            if contrast_mode == "am":
                h1, full, h2 = synthesize_am_triplet(
                    current, config, pulse, angle, sample_count, t0,
                    noise_key=(f, a))
                trace = full - h1 - h2
            else:
                trace = synthesize_transmit(
                    current, config, pulse, angle, tx_amplitude,
                    sample_count, t0, noise_key=(f, a, 0))
            out[f, a] = trace.astype(np.float32)
            if intra_frame_motion and a < n_angles - 1:
                current = advance_scene(current, inter_angle)
        if intra_frame_motion:
            used = (n_angles - 1) * inter_angle
            current = advance_scene(current, frame_period - used)
        else:
            current = advance_scene(frame_start, frame_period)
    return ChannelDataSet(config=config, samples=out, t0=t0)


# Scene description files: header `key = value` lines, then one scatterer
# per line as `x z amplitude vx vz gamma`.

def write_scene(scene: PhantomScene, path):
    lines = [f"noise_sigma = {scene.noise_sigma!r}",
             f"rng_seed = {scene.rng_seed}"]
    for s in scene.scatterers:
        lines.append(f"{s.position[0]!r} {s.position[1]!r} {s.amplitude!r} "
                     f"{s.velocity[0]!r} {s.velocity[1]!r} {s.nonlinearity!r}")
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_scene(path) -> PhantomScene:
    noise_sigma = 0.0
    rng_seed = 0
    scatterers = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" in stripped:
                key, _, value = stripped.partition("=")
                key = key.strip()
                if key == "noise_sigma":
                    noise_sigma = float(value)
                elif key == "rng_seed":
                    rng_seed = int(value)
                else:
                    raise FormatError(f"line {lineno}: unknown header key {key!r}")
                continue
            fields = stripped.split()
            if len(fields) != 6:
                raise FormatError(
                    f"line {lineno}: expected 'x z amplitude vx vz gamma'")
            x, z, amp, vx, vz, gamma = (float(v) for v in fields)
            scatterers.append(Scatterer((x, z), amp, (vx, vz), gamma))
    return PhantomScene(tuple(scatterers), noise_sigma, rng_seed)


# Built-in scenes.  Each builder returns (scene, grid, rois): the phantom, a
# matching beamforming grid, and named ROIs used by the metrics harness.

def point_grid_scene(seed=101, noise_sigma=0.0):
    """Static isolated point targets on a 3 x 3 lattice."""
    pts = [Scatterer((x, z), 1.0)
           for z in (10e-3, 14e-3, 18e-3)
           for x in (-3e-3, 0.0, 3e-3)]
    scene = PhantomScene(tuple(pts), noise_sigma=noise_sigma, rng_seed=seed)
    grid = ImageGrid(-5e-3, 5e-3, 8e-3, 20e-3, 65, 79)
    rois = {"A": ROI("ellipse", (0.0, 14e-3), (0.8e-3, 0.8e-3), "A"),
            "B": ROI("rectangle", (0.0, 11.9e-3), (2.0e-3, 0.7e-3), "B")}
    return scene, grid, rois


def two_channels_scene(seed=203, noise_sigma=2.05, n_per_channel=260):
    """Two parallel flow channels in an otherwise empty (noise-only) medium.

    Channel A: z in [11, 13] mm flowing +x; channel B: z in [16, 18] mm
    flowing -x.  Scatterers are seeded wider than the imaging grid so the
    channels stay populated while they drift.  The default seed and noise
    level are calibrated so the PD CC < PD FMAS < ASAP < SAMAS quality
    ordering holds on the bundled ROIs at ensemble 200.
    """
    rng = np.random.default_rng(seed)
    scatterers = []
    for z_lo, z_hi, vel in ((11e-3, 13e-3, (4e-3, 1.5e-3)),
                            (16e-3, 18e-3, (-4e-3, -1.5e-3))):
        xs = rng.uniform(-11e-3, 11e-3, n_per_channel)
        zs = rng.uniform(z_lo, z_hi, n_per_channel)
        amps = rng.uniform(0.5, 1.0, n_per_channel)
        scatterers += [Scatterer((x, z), a, vel)
                       for x, z, a in zip(xs, zs, amps)]
    scene = PhantomScene(tuple(scatterers), noise_sigma=noise_sigma,
                         rng_seed=seed)
    grid = ImageGrid(-3.2e-3, 3.2e-3, 8.5e-3, 21e-3, 41, 77)
    rois = {
        "A": ROI("rectangle", (0.0, 12e-3), (2.0e-3, 0.7e-3), "A"),
        "A_noise": ROI("rectangle", (0.0, 9.45e-3), (2.6e-3, 0.75e-3),
                       "A_noise"),
        "B": ROI("rectangle", (0.0, 17e-3), (2.0e-3, 0.7e-3), "B"),
        "B_noise": ROI("rectangle", (0.0, 19.7e-3), (2.6e-3, 0.85e-3),
                       "B_noise"),
    }
    return scene, grid, rois


def tissue_plus_flow_scene(seed=303, noise_sigma=1e-3, clutter_gain=100.0):
    """Strong static scatterer field with a weak moving channel through it."""
    rng = np.random.default_rng(seed)
    scatterers = []
    n_tissue = 300
    xs = rng.uniform(-8e-3, 8e-3, n_tissue)
    zs = rng.uniform(9e-3, 20e-3, n_tissue)
    amps = clutter_gain * rng.uniform(0.5, 1.0, n_tissue)
    scatterers += [Scatterer((x, z), a) for x, z, a in zip(xs, zs, amps)]
    n_flow = 150
    xs = rng.uniform(-9e-3, 9e-3, n_flow)
    zs = rng.uniform(13.5e-3, 15.5e-3, n_flow)
    amps = rng.uniform(0.5, 1.0, n_flow)
    scatterers += [Scatterer((x, z), a, (3e-3, 8e-3))
                   for x, z, a in zip(xs, zs, amps)]
    scene = PhantomScene(tuple(scatterers), noise_sigma=noise_sigma,
                         rng_seed=seed)
    grid = ImageGrid(-5e-3, 5e-3, 9e-3, 20e-3, 61, 71)
    rois = {"flow": ROI("rectangle", (0.0, 14.5e-3), (3e-3, 0.7e-3), "flow"),
            "tissue": ROI("rectangle", (0.0, 11e-3), (3e-3, 1.0e-3), "tissue")}
    return scene, grid, rois


def offaxis_point_scene(seed=404, noise_sigma=0.12,
                        companion_amplitudes=None):
    """Single off-axis point target, for grating-lobe demonstrations.

    With sub-aperture splitting the mask period 2k*pitch puts the first
    grating lobe at sin(theta) = sin(theta0) +- lambda / (2k*pitch); for the
    default geometry the k=2 lobe lands inside this grid.  Probe it with a
    long tone burst (~16 cycles): short pulses decohere the lobe.

    companion_amplitudes, when given as (a2, a3), adds two bright
    scatterers sitting on the target's k=2 and k=4 grating-lobe positions;
    their own lobes then interfere with the target, which is what makes the
    aperture-pattern comparison discriminate.
    """
    scatterers = [Scatterer((1.5e-3, 12e-3), 1.0)]
    if companion_amplitudes is not None:
        a2, a3 = companion_amplitudes
        scatterers.append(Scatterer((-3.44e-3, 12.06e-3), a2))
        scatterers.append(Scatterer((-0.94e-3, 11.88e-3), a3))
    scene = PhantomScene(tuple(scatterers), noise_sigma=noise_sigma,
                         rng_seed=seed)
    grid = ImageGrid(-5e-3, 5e-3, 9e-3, 15.5e-3, 81, 53)
    rois = {
        "A": ROI("ellipse", (1.5e-3, 12e-3), (0.8e-3, 1.6e-3), "A"),
        "B": ROI("rectangle", (0.6e-3, 14.35e-3), (2.2e-3, 0.5e-3), "B"),
        "B_ghost": ROI("ellipse", (-3.3e-3, 12e-3), (1.2e-3, 1.8e-3),
                       "B_ghost"),
    }
    return scene, grid, rois


SCENE_BUILDERS = {
    "point_grid": point_grid_scene,
    "two_channels": two_channels_scene,
    "tissue_plus_flow": tissue_plus_flow_scene,
    "offaxis_point": offaxis_point_scene,
}


def built_in_scene(name, **kwargs):
    try:
        builder = SCENE_BUILDERS[name]
    except KeyError:
        raise ValueError(
            f"unknown scene {name!r}; available: {sorted(SCENE_BUILDERS)}")
    return builder(**kwargs)
