"""Command-line interface: simulate, beamform, metrics, bench, reproduce.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.
Every run writes a manifest (config + seeds + versions) next to its outputs.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .acquisition import (FormatError, ROI, apply_config_overrides,
                          desk_config, read_config_file, read_dataset,
                          validate_config, write_dataset)
from .beamformer import ApodizationSpec
from .compounding import PowerImage
from .metrics import compute_cnr, compute_snr, export_image
from .pipelines import (PIPELINES, MetricsReport, PipelineOptions, bench,
                        reproduce_tables, run_pipeline, write_manifest)
from .simulator import (PulseSpec, built_in_scene, read_scene,
                        synthesize_sequence)
from .subaperture import AperturePattern


class NumericalFailure(Exception):
    pass


def _load_config(args):
    config = read_config_file(args.config) if args.config else desk_config()
    if getattr(args, "override", None):
        config = apply_config_overrides(config, args.override)
    return validate_config(config)


def _manifest_for(args, config, extra=None):
    entries = {"command": args.command, "pwdoppler_version": __version__,
               "numpy_version": np.__version__}
    entries.update({
        "num_elements": config.num_elements,
        "pitch": config.pitch,
        "center_frequency": config.center_frequency,
        "transmit_frequency": config.transmit_frequency,
        "sampling_frequency": config.sampling_frequency,
        "sound_speed": config.sound_speed,
        "angles": ",".join(repr(a) for a in config.angles),
        "prf": config.prf,
        "frame_rate": config.frame_rate,
        "tukey_alpha": config.tukey_alpha,
    })
    if extra:
        entries.update(extra)
    return entries


def _grid_from_args(args, default_grid=None):
    if args.grid is None:
        if default_grid is None:
            raise ValueError("no --grid given and scene has no default grid")
        return default_grid
    values = [float(v) for v in args.grid.split(",")]
    if len(values) != 6:
        raise ValueError("--grid expects x_min,x_max,z_min,z_max,nx,nz")
    from .acquisition import ImageGrid
    return ImageGrid(values[0], values[1], values[2], values[3],
                     int(values[4]), int(values[5]))


def read_roi_file(path):
    """One ROI per line: `label shape cx cz dx dz`."""
    rois = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if len(fields) != 6:
                raise FormatError(
                    f"line {lineno}: expected 'label shape cx cz dx dz'")
            label, shape = fields[0], fields[1]
            cx, cz, dx, dz = (float(v) for v in fields[2:])
            rois[label] = ROI(shape, (cx, cz), (dx, dz), label)
    return rois


def _cmd_simulate(args):
    config = _load_config(args)
    if args.scene in ("point_grid", "two_channels", "tissue_plus_flow",
                      "offaxis_point"):
        kwargs = {"seed": args.seed} if args.seed is not None else {}
        scene, _, _ = built_in_scene(args.scene, **kwargs)
    else:
        scene = read_scene(args.scene)
    pulse = PulseSpec(center_frequency=config.transmit_frequency)
    data = synthesize_sequence(scene, config, pulse, args.frames,
                               contrast_mode=args.mode)
    write_dataset(data, args.out)
    write_manifest(args.out + ".manifest.txt", _manifest_for(
        args, config, {"scene": args.scene, "frames": args.frames,
                       "mode": args.mode, "rng_seed": scene.rng_seed}))
    print(f"wrote {args.out}: {data.n_frames} frames x "
          f"{len(config.angles)} angles x {config.num_elements} elements x "
          f"{data.sample_count} samples")
    return 0


def _pipeline_options(args, grid):
    return PipelineOptions(
        grid=grid,
        apodization=ApodizationSpec(window=args.window,
                                    f_number=args.f_number),
        pattern=AperturePattern.from_name(args.pattern),
        variant=args.variant,
        clutter=args.clutter,
        ensemble=(args.ensemble_start, args.ensemble_stop)
        if args.ensemble_stop is not None else None,
        suppressor_mode=args.suppressor,
    )


def _cmd_beamform(args):
    data = read_dataset(args.dataset)
    grid = _grid_from_args(args)
    options = _pipeline_options(args, grid)
    pipelines = PIPELINES if args.pipeline == "all" else (args.pipeline,)
    os.makedirs(args.out_dir, exist_ok=True)
    for pipeline in pipelines:
        image, timing = run_pipeline(data, pipeline, options)
        if not np.all(np.isfinite(image.values)):
            raise NumericalFailure(f"non-finite power image from {pipeline}")
        stem = os.path.join(args.out_dir, pipeline)
        np.savez(stem + ".npz", values=image.values,
                 grid=np.array([grid.x_min, grid.x_max, grid.z_min,
                                grid.z_max, grid.nx, grid.nz]),
                 ensemble_length=image.ensemble_length)
        export_image(image, args.dynamic_range, stem + ".pgm")
        print(f"{pipeline}: beamform {timing.ms_per_frame('beamform'):.2f} "
              f"ms/frame -> {stem}.npz")
    write_manifest(os.path.join(args.out_dir, "manifest.txt"), _manifest_for(
        args, data.config, {"dataset": args.dataset,
                            "pipelines": ",".join(pipelines)}))
    return 0


def load_power_image(path) -> PowerImage:
    from .acquisition import ImageGrid
    with np.load(path) as bundle:
        g = bundle["grid"]
        grid = ImageGrid(float(g[0]), float(g[1]), float(g[2]), float(g[3]),
                         int(g[4]), int(g[5]))
        return PowerImage(grid=grid, values=bundle["values"],
                          ensemble_length=int(bundle["ensemble_length"]))


def _cmd_metrics(args):
    rois = read_roi_file(args.rois)
    pairs = []
    for spec in args.pair:
        a, _, b = spec.partition(":")
        if a not in rois or b not in rois:
            raise ValueError(f"ROI pair {spec!r} references unknown labels")
        pairs.append((rois[a], rois[b]))
    rows = []
    for path in args.images:
        image = load_power_image(path)
        label = os.path.splitext(os.path.basename(path))[0]
        for roi_signal, roi_background in pairs:
            snr = compute_snr(image, roi_signal, roi_background)
            cnr = compute_cnr(image, roi_signal, roi_background)
            rows.append((label, roi_signal.label, image.ensemble_length,
                         snr, 0.0, cnr, 0.0))
    report = MetricsReport(rows=rows)
    report.write_csv(args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_bench(args):
    data = read_dataset(args.dataset)
    grid = _grid_from_args(args)
    options = _pipeline_options(args, grid)
    pipelines = PIPELINES if args.pipeline == "all" else (args.pipeline,)
    report, _ = bench(data, options, pipelines=pipelines, runs=args.runs)
    report.write_csv(args.out)
    write_manifest(args.out + ".manifest.txt", _manifest_for(
        args, data.config, {"dataset": args.dataset, "runs": args.runs}))
    print(f"wrote {args.out} ({len(report.rows)} rows, {args.runs} runs)")
    return 0


def _cmd_reproduce(args):
    config = _load_config(args)
    kwargs = {"seed": args.seed} if args.seed is not None else {}
    scene, grid, rois = built_in_scene(args.scene, **kwargs)
    pulse = PulseSpec(center_frequency=config.transmit_frequency)
    data = synthesize_sequence(scene, config, pulse, args.frames,
                               contrast_mode=args.mode)
    pair_labels = args.pair or _default_pairs(args.scene)
    pairs = []
    for spec in pair_labels:
        a, _, b = spec.partition(":")
        pairs.append((rois[a], rois[b]))
    ensembles = tuple(int(v) for v in args.ensembles.split(","))
    metrics_report, timing_report, images = reproduce_tables(
        data, grid, pairs, args.out_dir, scene_name=args.scene,
        ensembles=ensembles, variant=args.variant,
        bench_runs=args.runs, manifest_extra=_manifest_for(
            args, config, {"scene": args.scene, "frames": args.frames,
                           "rng_seed": scene.rng_seed, "mode": args.mode}))
    print(f"wrote {args.out_dir}: metrics.csv, timing.csv, "
          f"{len(images)} images")
    return 0


def _default_pairs(scene):
    return {
        "two_channels": ["A:A_noise", "B:B_noise"],
        "tissue_plus_flow": ["flow:tissue"],
        "offaxis_point": ["A:B"],
        "point_grid": ["A:B"],
    }[scene]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pwdoppler",
        description="Plane-wave power Doppler beamforming toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="scene -> channel dataset file")
    p.add_argument("--scene", required=True,
                   help="built-in scene name or scene file path")
    p.add_argument("--config", help="acquisition config file")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="config field override")
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--mode", choices=("linear", "am"), default="linear")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    common_bf = argparse.ArgumentParser(add_help=False)
    common_bf.add_argument("--grid",
                           help="x_min,x_max,z_min,z_max,nx,nz (meters)")
    common_bf.add_argument("--pipeline", default="all",
                           choices=PIPELINES + ("all",))
    common_bf.add_argument("--pattern", default="10",
                           help="aperture pattern: 10, 1100, or 11110000")
    common_bf.add_argument("--variant", default="signed_sqrt",
                           choices=("signed_sqrt", "as_printed"))
    common_bf.add_argument("--clutter", default="none",
                           choices=("none", "svd", "rolling"))
    common_bf.add_argument("--window", default="rectangular",
                           choices=("rectangular", "hann", "tukey"))
    common_bf.add_argument("--f-number", type=float, default=0.0)
    common_bf.add_argument("--suppressor", default="binary",
                           choices=("binary", "smooth"))
    common_bf.add_argument("--ensemble-start", type=int, default=0)
    common_bf.add_argument("--ensemble-stop", type=int)

    p = sub.add_parser("beamform", parents=[common_bf],
                       help="dataset -> power images per pipeline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dynamic-range", type=float, default=50.0)
    p.set_defaults(func=_cmd_beamform)

    p = sub.add_parser("metrics", help="power images + ROI file -> CSV")
    p.add_argument("--images", nargs="+", required=True,
                   help=".npz power images from `beamform`")
    p.add_argument("--rois", required=True, help="ROI definition file")
    p.add_argument("--pair", action="append", required=True,
                   metavar="SIGNAL:BACKGROUND")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("bench", parents=[common_bf],
                       help="timing sweep -> CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("reproduce", help="full table run on a built-in scene")
    p.add_argument("--scene", default="two_channels",
                   choices=("point_grid", "two_channels", "tissue_plus_flow",
                            "offaxis_point"))
    p.add_argument("--config", help="acquisition config file")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE")
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--mode", choices=("linear", "am"), default="linear")
    p.add_argument("--seed", type=int)
    p.add_argument("--ensembles", default="25,50,100,200")
    p.add_argument("--variant", default="signed_sqrt",
                   choices=("signed_sqrt", "as_printed"))
    p.add_argument("--runs", type=int, default=5,
                   help="bench repetitions for the timing table")
    p.add_argument("--pair", action="append",
                   metavar="SIGNAL:BACKGROUND")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_reproduce)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 2
    except (NumericalFailure, np.linalg.LinAlgError,
            FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
