"""End-to-end image-formation pipelines with per-stage timing.

Every pipeline shares the Fig.-style path: clutter filter on channel data,
optional aperture split, per-angle delay-and-sum, angle combination (sum or
FMAS), per-frame correlation products, ensemble averaging, and for SAMAS the
sidelobe suppressor.  Stage wall times are recorded so the benchmark harness
can emit a timing table.
"""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .acquisition import (AcquisitionConfig, ChannelDataSet, ImageGrid, ROI,
                          _atomic_write_bytes)
from .beamformer import AnalyticImageStack, ApodizationSpec, beamform_stack
from .clutter import (RollingWindow, SvdThresholds, filter_channel_data,
                      tgc_equalize, window_for_cutoff)
from .compounding import PowerImage, coherent_compound, fmas_compound
from .metrics import compute_cnr, compute_snr, export_image, export_mask
from .simulator import (PhantomScene, PulseSpec, built_in_scene,
                        synthesize_sequence)
from .subaperture import (AperturePattern, asap_power, asap_correlate,
                          sidelobe_suppressor, split_aperture)

PIPELINES = ("pd_cc", "pd_fmas", "asap", "asap_fmas", "samas")
BEAMFORM_SUBSTAGES = ("das", "combine", "correlation", "ensemble",
                      "suppressor")


@dataclass
class PipelineOptions:
    """Knobs shared by every pipeline run."""

    grid: ImageGrid
    apodization: ApodizationSpec = field(default_factory=ApodizationSpec)
    pattern: AperturePattern = field(default_factory=AperturePattern)
    variant: str = "signed_sqrt"
    clutter: str = "none"              # "none", "svd", or "rolling"
    svd_low_cut: int | None = None     # None -> knee heuristic
    svd_high_cut: int | None = None
    rolling_window: int | None = None  # None -> derive from cutoff
    rolling_cutoff_hz: float = 5.0
    ensemble: tuple | None = None      # (start, stop) frame range
    suppressor_mode: str = "binary"
    asap_power_mode: str = "positive_real"
    tgc: bool = False
    tgc_noise_band: int = 4


@dataclass
class StageTiming:
    """Wall seconds per stage for one pipeline execution."""

    pipeline: str
    n_frames: int
    seconds: dict

    def ms_per_frame(self, stage):
        return 1000.0 * self.seconds.get(stage, 0.0) / max(self.n_frames, 1)


class _Stopwatch:
    def __init__(self):
        self.seconds = {}

    def add(self, stage, start):
        self.seconds[stage] = self.seconds.get(stage, 0.0) + (
            time.perf_counter() - start)


def _select_frames(data: ChannelDataSet, ensemble):
    if ensemble is None:
        return data
    start, stop = ensemble
    if not 0 <= start < stop <= data.n_frames:
        raise ValueError("ensemble range outside dataset frames")
    return replace(data, samples=data.samples[start:stop])


def _clutter(data: ChannelDataSet, opts: PipelineOptions) -> ChannelDataSet:
    if opts.clutter == "none":
        return data
    if opts.clutter == "svd":
        thresholds = None
        if opts.svd_low_cut is not None:
            thresholds = SvdThresholds(opts.svd_low_cut, opts.svd_high_cut)
        return filter_channel_data(data, "svd", thresholds=thresholds)
    if opts.clutter == "rolling":
        w = opts.rolling_window
        if w is None:
            w = window_for_cutoff(opts.rolling_cutoff_hz,
                                  data.config.frame_rate)
        return filter_channel_data(data, "rolling", window=RollingWindow(w))
    raise ValueError(f"unknown clutter method {opts.clutter!r}")


def run_pipeline(data: ChannelDataSet, pipeline: str,
                 options: PipelineOptions):
    """Execute one pipeline end to end.

    Returns (PowerImage, StageTiming).  The power image is deterministic for
    fixed inputs; only the timing varies between runs.
    """
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r}; choose from "
                         f"{PIPELINES}")
    watch = _Stopwatch()
    grid = options.grid

    t = time.perf_counter()
    selected = _select_frames(data, options.ensemble)
    if selected.n_frames == 0:
        raise ValueError("empty ensemble")
    filtered = _clutter(selected, options)
    split = pipeline in ("asap", "asap_fmas", "samas")
    if split:
        mask1, mask2 = split_aperture(filtered.config.num_elements,
                                      options.pattern)
    watch.add("load", t)

    t_beamform = time.perf_counter()

    t = time.perf_counter()
    if split:
        stack1 = beamform_stack(filtered, grid, options.apodization, mask1)
        stack2 = beamform_stack(filtered, grid, options.apodization, mask2)
    else:
        stack = beamform_stack(filtered, grid, options.apodization)
    watch.add("das", t)

    t = time.perf_counter()
    if pipeline == "pd_cc":
        frames = coherent_compound(stack)
    elif pipeline == "pd_fmas":
        frames = fmas_compound(stack, options.variant)
    elif pipeline == "asap":
        cc1 = coherent_compound(stack1)
        cc2 = coherent_compound(stack2)
    elif pipeline == "asap_fmas":
        f1 = fmas_compound(stack1, options.variant)
        f2 = fmas_compound(stack2, options.variant)
    else:  # samas needs both combinations of both halves
        cc1 = coherent_compound(stack1)
        cc2 = coherent_compound(stack2)
        f1 = fmas_compound(stack1, options.variant)
        f2 = fmas_compound(stack2, options.variant)
    watch.add("combine", t)

    t = time.perf_counter()
    if pipeline in ("pd_cc", "pd_fmas"):
        products = np.abs(frames) ** 2
    elif pipeline == "asap":
        products = cc1 * np.conj(cc2)
    elif pipeline == "asap_fmas":
        products = f1 * f2
    else:
        products_cc = cc1 * np.conj(cc2)
        products_af = f1 * f2
    watch.add("correlation", t)

    t = time.perf_counter()
    n_frames = filtered.n_frames
    if pipeline == "samas":
        r_asap = products_cc.mean(axis=0)
        r_af = products_af.mean(axis=0)
    else:
        r = products.mean(axis=0)
    watch.add("ensemble", t)

    t = time.perf_counter()
    if pipeline == "samas":
        from .subaperture import CorrelationImage
        mask = sidelobe_suppressor(
            CorrelationImage(grid, r_asap, n_frames), options.suppressor_mode)
        values = mask.weights * np.maximum(np.real(r_af), 0.0)
    elif pipeline == "asap":
        from .subaperture import CorrelationImage
        values = asap_power(CorrelationImage(grid, r, n_frames),
                            options.asap_power_mode).values
    elif pipeline == "asap_fmas":
        values = np.maximum(np.real(r), 0.0)
    else:
        values = np.real(r)
    watch.add("suppressor", t)

    watch.add("beamform", t_beamform)

    image = PowerImage(grid=grid, values=values, ensemble_length=n_frames)
    if options.tgc:
        t = time.perf_counter()
        _, equalized = tgc_equalize(image.values, options.tgc_noise_band)
        image = PowerImage(grid=grid, values=equalized,
                           ensemble_length=n_frames)
        watch.add("tgc", t)
    return image, StageTiming(pipeline=pipeline, n_frames=n_frames,
                              seconds=watch.seconds)


@dataclass
class TimingReport:
    """Per (pipeline, stage) mean and sd of ms/frame over repeated runs."""

    rows: list  # (pipeline, stage, mean_ms, sd_ms)

    def lookup(self, pipeline, stage):
        for p, s, mean, sd in self.rows:
            if p == pipeline and s == stage:
                return mean, sd
        raise KeyError((pipeline, stage))

    def to_csv_bytes(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pipeline", "stage", "mean_ms", "sd_ms"])
        for pipeline, stage, mean, sd in self.rows:
            writer.writerow([pipeline, stage, f"{mean:.6f}", f"{sd:.6f}"])
        return buf.getvalue().encode()

    def write_csv(self, path):
        _atomic_write_bytes(path, self.to_csv_bytes())


def bench(data: ChannelDataSet, options: PipelineOptions,
          pipelines=PIPELINES, runs=5):
    """Run each pipeline `runs` times serially and aggregate stage timings."""
    if runs < 1:
        raise ValueError("runs >= 1")
    rows = []
    images = {}
    for pipeline in pipelines:
        samples = {}
        for _ in range(runs):
            image, timing = run_pipeline(data, pipeline, options)
            for stage in ("load", "beamform") + BEAMFORM_SUBSTAGES:
                samples.setdefault(stage, []).append(
                    timing.ms_per_frame(stage))
        images[pipeline] = image
        for stage, values in samples.items():
            arr = np.asarray(values)
            rows.append((pipeline, stage, float(arr.mean()),
                         float(arr.std())))
    return TimingReport(rows=rows), images


@dataclass
class MetricsReport:
    """SNR / CNR per (pipeline, ROI pair, ensemble length).

    Means and standard deviations are taken over the non-overlapping
    ensembles that fit in the dataset (sd is 0 when only one fits).
    """

    rows: list  # (pipeline, roi, ensemble, snr_db, snr_sd, cnr_db, cnr_sd)

    def lookup(self, pipeline, roi, ensemble):
        for row in self.rows:
            if row[0] == pipeline and row[1] == roi and row[2] == ensemble:
                return row
        raise KeyError((pipeline, roi, ensemble))

    def to_csv_bytes(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pipeline", "roi", "ensemble", "snr_db", "snr_sd",
                         "cnr_db", "cnr_sd"])
        for pipeline, roi, ensemble, snr, snr_sd, cnr, cnr_sd in self.rows:
            writer.writerow([pipeline, roi, ensemble, f"{snr:.6f}",
                             f"{snr_sd:.6f}", f"{cnr:.6f}", f"{cnr_sd:.6f}"])
        return buf.getvalue().encode()

    def write_csv(self, path):
        _atomic_write_bytes(path, self.to_csv_bytes())


def _window_means(products, length, max_repeats):
    """Means of consecutive non-overlapping windows along the frame axis."""
    total = products.shape[0]
    count = min(total // length, max_repeats)
    return [products[i * length:(i + 1) * length].mean(axis=0)
            for i in range(count)]


class _SharedStacks:
    """Compounded frame sequences reused across pipelines and ensembles."""

    def __init__(self, data, grid, apod, variant, patterns,
                 suppressor_mode):
        self.grid = grid
        self.suppressor_mode = suppressor_mode
        full = beamform_stack(data, grid, apod)
        cc = coherent_compound(full)
        fm = fmas_compound(full, variant)
        self.products = {"pd_cc": np.abs(cc) ** 2, "pd_fmas": fm ** 2}
        self.asap_products = {}
        for pattern in patterns:
            m1, m2 = split_aperture(data.config.num_elements, pattern)
            s1 = beamform_stack(data, grid, apod, m1)
            s2 = beamform_stack(data, grid, apod, m2)
            cc_prod = coherent_compound(s1) * np.conj(coherent_compound(s2))
            af_prod = (fmas_compound(s1, variant)
                       * fmas_compound(s2, variant))
            self.asap_products[pattern.run_length] = (cc_prod, af_prod)

    def labels(self, patterns):
        out = ["pd_cc", "pd_fmas"]
        for pattern in patterns:
            tag = pattern.short_name
            out += [f"asap@{tag}", f"asap_fmas@{tag}", f"samas@{tag}"]
        return out

    def window_image(self, label, start, length):
        """PowerImage for `label` over frames [start, start + length)."""
        sel = slice(start, start + length)
        if label in self.products:
            values = self.products[label][sel].mean(axis=0)
        else:
            name, tag = label.split("@")
            pattern = AperturePattern.from_name(tag)
            cc_prod, af_prod = self.asap_products[pattern.run_length]
            if name == "asap":
                values = np.maximum(np.real(cc_prod[sel].mean(axis=0)), 0.0)
            elif name == "asap_fmas":
                values = np.maximum(np.real(af_prod[sel].mean(axis=0)), 0.0)
            else:
                from .subaperture import CorrelationImage
                r_asap = cc_prod[sel].mean(axis=0)
                mask = sidelobe_suppressor(
                    CorrelationImage(self.grid, r_asap, length),
                    self.suppressor_mode)
                values = mask.weights * np.maximum(
                    np.real(af_prod[sel].mean(axis=0)), 0.0)
        return PowerImage(grid=self.grid, values=values,
                          ensemble_length=length)


def reproduce_tables(data: ChannelDataSet, grid: ImageGrid, roi_pairs,
                     out_dir, scene_name="scene",
                     ensembles=(25, 50, 100, 200),
                     patterns=(1, 2, 4), variant="signed_sqrt",
                     apodization=None, suppressor_mode="binary",
                     max_repeats=5, bench_runs=5, bench_frames=25,
                     dynamic_range_db=50.0, manifest_extra=None):
    """Run all pipelines over ensemble sweeps and emit CSV tables plus images.

    roi_pairs: list of (signal ROI, background ROI).  Sub-aperture pipelines
    run once per aperture pattern, labelled e.g. "samas@1100".  Writes
    metrics.csv, timing.csv, one PGM per (pipeline, ensemble), and a
    manifest; returns (MetricsReport, TimingReport, image paths).
    """
    os.makedirs(out_dir, exist_ok=True)
    apod = apodization or ApodizationSpec()
    patterns = [p if isinstance(p, AperturePattern) else AperturePattern(p)
                for p in patterns]
    ensembles = sorted(ensembles)
    usable = [L for L in ensembles if L <= data.n_frames]
    if not usable:
        raise ValueError("no ensemble length fits the dataset")

    shared = _SharedStacks(data, grid, apod, variant, patterns,
                           suppressor_mode)
    labels = shared.labels(patterns)

    metric_rows = []
    image_paths = []
    for label in labels:
        for length in usable:
            count = min(data.n_frames // length, max_repeats)
            snrs, cnrs = [], []
            for i in range(count):
                image = shared.window_image(label, i * length, length)
                for roi_signal, roi_background in roi_pairs:
                    snrs.append(compute_snr(image, roi_signal,
                                            roi_background))
                    cnrs.append(compute_cnr(image, roi_signal,
                                            roi_background))
            per_pair = len(roi_pairs)
            for j, (roi_signal, _) in enumerate(roi_pairs):
                s = np.asarray(snrs[j::per_pair])
                c = np.asarray(cnrs[j::per_pair])
                metric_rows.append((label, roi_signal.label or f"roi{j}",
                                    length, float(s.mean()), float(s.std()),
                                    float(c.mean()), float(c.std())))
            image = shared.window_image(label, 0, length)
            safe_label = label.replace("@", "_")
            path = os.path.join(
                out_dir, f"{scene_name}_{safe_label}_{length}.pgm")
            export_image(image, dynamic_range_db, path)
            image_paths.append(path)
    metrics_report = MetricsReport(rows=metric_rows)
    metrics_report.write_csv(os.path.join(out_dir, "metrics.csv"))

    bench_data = _select_frames(data, (0, min(bench_frames, data.n_frames)))
    timing_report, _ = bench(
        bench_data, PipelineOptions(grid=grid, apodization=apod,
                                    variant=variant,
                                    suppressor_mode=suppressor_mode),
        runs=bench_runs)
    timing_report.write_csv(os.path.join(out_dir, "timing.csv"))

    manifest = {
        "scene": scene_name,
        "frames": data.n_frames,
        "elements": data.config.num_elements,
        "angles": len(data.config.angles),
        "ensembles": ",".join(str(L) for L in usable),
        "patterns": ",".join(p.short_name for p in patterns),
        "variant": variant,
        "suppressor_mode": suppressor_mode,
        "pwdoppler_version": __version__,
        "numpy_version": np.__version__,
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    write_manifest(os.path.join(out_dir, "manifest.txt"), manifest)
    return metrics_report, timing_report, image_paths


def write_manifest(path, entries):
    lines = [f"{key} = {value}" for key, value in entries.items()]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def simulate_named_scene(name, config: AcquisitionConfig, n_frames,
                         pulse: PulseSpec | None = None,
                         contrast_mode="linear", scene_kwargs=None):
    """Simulate a built-in scene; returns (dataset, grid, rois, scene)."""
    scene, grid, rois = built_in_scene(name, **(scene_kwargs or {}))
    if pulse is None:
        pulse = PulseSpec(center_frequency=config.transmit_frequency)
    data = synthesize_sequence(scene, config, pulse, n_frames,
                               contrast_mode=contrast_mode)
    return data, grid, rois, scene
