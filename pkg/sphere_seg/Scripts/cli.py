"""
Command-line surface.

Exit codes: 0 success, 1 internal error, 2 configuration or usage error,
3 bad input, 4 segmenter failure.
"""
import argparse
import glob
import json
import logging
import os
import sys
from typing import List, Optional, Sequence

import cv2
import numpy as np
import pandas as pd
from pydantic import ValidationError

from .augmentation import random_rotate_zoom
from .config import settings, setup_logging
from .exceptions import (
    EXIT_INTERNAL,
    EXIT_OK,
    ConfigError,
    InputError,
    InvalidVolumeError,
    SphereSegError,
)
from .io_formats import is_nifti_path, read_nifti, read_svol_array, read_volume, write_nifti, write_volume
from .metrics import evaluate_case, format_table, write_metrics_csv
from .origin_selection import (
    SelectionMode,
    first_pass_origins,
    second_pass_origins,
    third_pass_origins,
)
from .phantom import PhantomSpec, generate_phantom
from .pipeline import PipelineReport, run_cascade
from .schemas import PipelineConfig, load_pipeline_config
from .spherical_transform import (
    Interpolation,
    Origin,
    RadiusMode,
    SphericalGrid,
    SphericalVolume,
    build_grid,
    forward_transform,
    inverse_project_labels,
    polar_transform_2d,
)
from .volume_core import (
    LabelVolume,
    MultiChannelVolume,
    ScalarVolume,
    Spacing,
    labels_from_region_masks,
    region_masks_from_labels,
    volume_center_mm,
    volume_extent_mm,
)

SIDECAR_SUFFIX: str = ".json"
DEMO_TILE: int = 256
DEMO_ANGLE_DEG: float = 45.0
DEMO_SCALE: float = 2.0

EXIT_CODE_HELP = """exit codes:
  0  success
  1  internal error
  2  configuration or usage error
  3  bad input (missing file, malformed volume, dims mismatch)
  4  segmenter failure
"""


# --- Flag parsing ---
def parse_triplet(text: str, cast=float) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"Expected three comma-separated values, got '{text}'")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError as e:
        raise ConfigError(f"Cannot parse '{text}': {e}") from e


def resolve_origin(text: str, dims: Sequence[int], spacing) -> Origin:
    if text.strip().lower() == "center":
        return Origin.from_sequence(volume_center_mm(dims, spacing))
    origin = Origin.from_sequence(parse_triplet(text))
    extent = volume_extent_mm(dims, spacing)
    if np.any(origin.as_array() < 0) or np.any(origin.as_array() > extent):
        logging.warning(f"⚠️ Origin {origin.as_tuple()} lies outside the volume extent {extent.tolist()}")
    return origin


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then --seed and --grid."""
    cfg = load_pipeline_config(args.config) if getattr(args, "config", None) else PipelineConfig()

    if getattr(args, "seed", None) is not None:
        selection = cfg.selection.model_copy(update={"rng_seed": args.seed})
        cfg = cfg.model_copy(update={"rng_seed": args.seed, "selection": selection})
    if getattr(args, "grid", None):
        n_r, n_theta, n_phi = parse_triplet(args.grid, int)
        grid = cfg.grid.model_copy(update={"n_r": n_r, "n_theta": n_theta, "n_phi": n_phi})
        cfg = cfg.model_copy(update={"grid": grid})
    # model_copy skips validation
    try:
        return PipelineConfig.model_validate(cfg.model_dump())
    except ValidationError as e:
        raise ConfigError(f"Invalid flags: {e}") from e


def resolve_threads(args: argparse.Namespace, cfg: Optional[PipelineConfig] = None) -> int:
    if getattr(args, "threads", None):
        return args.threads
    if "SPHERESEG_THREADS" in settings.model_fields_set:
        return settings.SPHERESEG_THREADS
    return cfg.parallelism if cfg is not None else 1


def _write_json(payload: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _require_file(path: str) -> None:
    if not os.path.isfile(path):
        raise InputError(f"Input file not found: {path}")


# --- Case directories ---
def load_case(case_dir: str) -> MultiChannelVolume:
    """
    Reads a case from BraTS-named channel files, a single 4D NIfTI, or
    input_ch{0..}.svol fixtures.
    """
    if not os.path.isdir(case_dir):
        raise InputError(f"Case directory not found: {case_dir}")

    names = settings.PROJECT.CHANNEL_NAMES
    found = {}
    for name in names:
        matches = sorted(glob.glob(os.path.join(case_dir, f"*_{name}.nii*")))
        if matches:
            found[name] = matches[0]
    if found:
        missing = [n for n in names if n not in found]
        if missing:
            raise InputError(f"Case {case_dir} is missing channel(s): {', '.join(missing)}")
        channels = tuple(read_nifti(found[n]).channels[0] for n in names)
        return MultiChannelVolume(channels, names)

    svols = []
    index = 0
    while os.path.isfile(os.path.join(case_dir, settings.PROJECT.EXCHANGE_INPUT_PATTERN.format(index=index))):
        svols.append(os.path.join(case_dir, settings.PROJECT.EXCHANGE_INPUT_PATTERN.format(index=index)))
        index += 1
    if svols:
        channels = []
        for path in svols:
            volume = read_volume(path)
            channels.extend(volume.channels)
        return MultiChannelVolume(tuple(channels))

    images = [p for p in sorted(glob.glob(os.path.join(case_dir, "*.nii*"))) if "_seg." not in os.path.basename(p)]
    if len(images) == 1:
        return read_nifti(images[0])
    raise InputError(f"No readable case in {case_dir} (found {len(images)} candidate NIfTI files)")


# --- Subcommands ---
def cmd_transform(args: argparse.Namespace) -> int:
    _require_file(args.input)
    cfg = load_config(args)
    volume = read_volume(args.input, as_labels=args.labels)

    if isinstance(volume, MultiChannelVolume):
        if not 0 <= args.channel < len(volume.channels):
            raise InputError(f"Channel {args.channel} out of range for {len(volume.channels)} channel(s)")
        volume = volume.channels[args.channel]

    interp = Interpolation(args.interp)
    if isinstance(volume, LabelVolume) and interp is not Interpolation.NEAREST:
        logging.info("Label input, using nearest interpolation")
        interp = Interpolation.NEAREST

    origin = resolve_origin(args.origin, volume.dims, volume.spacing)
    mode = args.r_max_mode or cfg.grid.r_max_mode
    grid = build_grid(volume, origin, cfg.grid.n_r, cfg.grid.n_theta, cfg.grid.n_phi, mode)
    spherical = forward_transform(volume, grid, interp, threads=resolve_threads(args, cfg))

    if is_nifti_path(args.output):
        # spherical data keeps its grid steps as pixdim
        holder = LabelVolume if spherical.is_label else ScalarVolume
        write_nifti(holder(spherical.data, spherical.spacing), args.output)
    else:
        write_volume(spherical, args.output)

    sidecar = {
        "origin": list(origin.as_tuple()),
        "grid": grid.to_dict(),
        "r_max": grid.r_max,
        "r_max_mode": RadiusMode(mode).value,
        "interpolation": interp.value,
        "is_label": spherical.is_label,
        "source_dims": list(volume.dims),
        "source_spacing": volume.spacing.as_array().tolist(),
    }
    _write_json(sidecar, args.output + SIDECAR_SUFFIX)
    logging.info(f"✅ Spherical volume {grid.shape} written to {args.output} (r_max {grid.r_max:.2f} mm)")
    return EXIT_OK


def cmd_inverse(args: argparse.Namespace) -> int:
    _require_file(args.input)
    sidecar_path = args.sidecar or args.input + SIDECAR_SUFFIX
    _require_file(sidecar_path)
    try:
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        grid = SphericalGrid.from_dict(sidecar["grid"])
        dims = sidecar["source_dims"]
        spacing = Spacing.from_sequence(sidecar["source_spacing"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise InputError(f"Malformed sidecar {sidecar_path}: {e}") from e

    if is_nifti_path(args.input):
        data = read_nifti(args.input, as_labels=True).data
    else:
        data, _, _ = read_svol_array(args.input)
    spherical = SphericalVolume(grid, data, is_label=True)

    labels = inverse_project_labels(spherical, dims, spacing, threads=resolve_threads(args))
    write_volume(labels, args.output)
    logging.info(f"✅ Labels {labels.dims} written to {args.output}")
    return EXIT_OK


def cmd_origins(args: argparse.Namespace) -> int:
    _require_file(args.input)
    cfg = load_config(args)
    selection = cfg.selection

    if args.pass_index == 1:
        volume = read_volume(args.input)
        channels = volume.channels if isinstance(volume, MultiChannelVolume) else (volume,)
        brain = np.logical_or.reduce([np.asarray(c.data) != 0 for c in channels])
        origin_set = first_pass_origins(brain, volume.spacing, selection, SelectionMode(args.mode))
    else:
        labels = read_volume(args.input, as_labels=True)
        masks = region_masks_from_labels(labels)
        choose = second_pass_origins if args.pass_index == 2 else third_pass_origins
        origin_set = choose(masks.wt, masks.tc, labels.spacing, selection)

    payload = origin_set.to_dict()
    if args.output:
        _write_json(payload, args.output)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def report_frame(report: PipelineReport) -> pd.DataFrame:
    rows = [p.model_dump(exclude={"origins", "warnings"}) for p in report.summary().passes]
    return pd.DataFrame(rows)


def write_report(report: PipelineReport, out_dir: str, keep_intermediates: bool = False) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_nifti(report.final_labels, os.path.join(out_dir, "labels.nii.gz"))
    _write_json(report.summary().model_dump(mode="json"), os.path.join(out_dir, "report.json"))
    report_frame(report).to_csv(os.path.join(out_dir, "report.csv"), index=False, float_format="%.3f")
    _write_json({k: round(v, 6) for k, v in report.stage_seconds.items()}, os.path.join(out_dir, "timings.json"))

    if keep_intermediates:
        for index, result in enumerate(report.passes, start=1):
            labels = labels_from_region_masks(*result.merged)
            write_nifti(labels, os.path.join(out_dir, f"pass{index}_labels.nii.gz"))
        if report.cartesian_wt is not None:
            wt = LabelVolume(np.where(report.cartesian_wt, 2, 0), report.final_labels.spacing)
            write_nifti(wt, os.path.join(out_dir, "cartesian_wt.nii.gz"))


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    if not args.config:
        logging.warning("⚠️ No --config given, running with default settings")
    volume = load_case(args.case_dir)
    logging.info(f"🔄 Case {args.case_dir}: {len(volume.channels)} channel(s), dims {volume.dims}")

    report = run_cascade(volume, cfg, threads=resolve_threads(args, cfg))
    write_report(report, args.out_dir, args.keep_intermediates)
    logging.info(f"✅ Final labels written to {args.out_dir}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    _require_file(args.pred)
    _require_file(args.truth)
    pred = read_volume(args.pred, as_labels=True)
    truth = read_volume(args.truth, as_labels=True)
    case_id = args.case_id or os.path.basename(args.pred).split(".")[0]

    metrics = evaluate_case(pred, truth, case_id=case_id)
    print(format_table([metrics]))
    if args.csv:
        write_metrics_csv([metrics], args.csv)
    return EXIT_OK


def cmd_phantom(args: argparse.Namespace) -> int:
    try:
        spec = PhantomSpec(
            extent_mm=parse_triplet(args.extent),
            spacing=parse_triplet(args.spacing),
            noise_sigma=args.noise,
            seed=args.seed if args.seed is not None else 0,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid phantom settings: {e}") from e

    channels, truth = generate_phantom(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, channel in zip(channels.names, channels.channels):
        write_nifti(channel, os.path.join(args.out_dir, f"{args.case}_{name}.nii.gz"))
    write_nifti(truth, os.path.join(args.out_dir, f"{args.case}_seg.nii.gz"))
    logging.info(f"✅ Phantom case '{args.case}' {spec.dims} written to {args.out_dir}")
    return EXIT_OK


def read_image_2d(path: str) -> np.ndarray:
    _require_file(path)
    if path.endswith(".npy"):
        image = np.load(path)
    else:
        image = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
        if image is None:
            raise InputError(f"OpenCV cannot read {path}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InvalidVolumeError(f"demo-polar expects a 2D image, got shape {image.shape}")
    return image


def _to_tile(image: np.ndarray) -> np.ndarray:
    low, high = float(image.min()), float(image.max())
    scaled = np.zeros(image.shape) if high <= low else (image - low) / (high - low)
    tile = cv2.resize((scaled * 255.0).astype(np.uint8), (DEMO_TILE, DEMO_TILE), interpolation=cv2.INTER_NEAREST)
    return tile


def polar_demo_panel(image: np.ndarray, n_r: int, n_theta: int) -> np.ndarray:
    """
    Top row: original, rotated 45 degrees, scaled 2x. Bottom row: their polar
    transforms about the image center.
    """
    rows, cols = image.shape
    center = (cols / 2.0, rows / 2.0)
    rotation = cv2.getRotationMatrix2D(center, DEMO_ANGLE_DEG, 1.0)
    rotated = cv2.warpAffine(image, rotation, (cols, rows), flags=cv2.INTER_LINEAR, borderValue=0)
    scaled = cv2.resize(image, None, fx=DEMO_SCALE, fy=DEMO_SCALE, interpolation=cv2.INTER_LINEAR)

    inputs = [image, rotated, scaled]
    polars = [polar_transform_2d(img, np.asarray(img.shape) / 2.0, n_r, n_theta) for img in inputs]
    top = np.hstack([_to_tile(img) for img in inputs])
    bottom = np.hstack([_to_tile(p) for p in polars])
    return np.vstack([top, bottom])


def cmd_demo_polar(args: argparse.Namespace) -> int:
    image = read_image_2d(args.input)
    if not image.any():
        logging.warning("⚠️ Empty image: the polar transforms are degenerate (all zero)")

    panel = polar_demo_panel(image, args.n_r, args.n_theta)
    directory = os.path.dirname(os.path.abspath(args.output))
    os.makedirs(directory, exist_ok=True)
    if not cv2.imwrite(args.output, panel):
        raise InputError(f"OpenCV cannot write {args.output}")
    logging.info(f"✅ Polar demo panel written to {args.output}")
    return EXIT_OK


def cmd_augment(args: argparse.Namespace) -> int:
    _require_file(args.input)
    volume = read_volume(args.input)
    labels = None
    if args.labels:
        _require_file(args.labels)
        labels = read_volume(args.labels, as_labels=True)

    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    augmented, warped, params = random_rotate_zoom(
        volume, rng, max_angle_deg=args.max_angle, zoom_range=(args.zoom_min, args.zoom_max), labels=labels
    )
    write_volume(augmented, args.output)
    if warped is not None:
        write_volume(warped, args.labels_output or _sibling(args.output, "_seg"))
    _write_json(params.to_dict(), args.output + SIDECAR_SUFFIX)
    logging.info(f"✅ Augmented volume written to {args.output} (zoom {params.zoom:.3f})")
    return EXIT_OK


def _sibling(path: str, suffix: str) -> str:
    for ext in (".nii.gz", ".nii", ".svol"):
        if path.endswith(ext):
            return path[: -len(ext)] + suffix + ext
    return path + suffix


# --- Parser ---
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Pipeline config JSON")
    common.add_argument("--seed", type=int, help="Override the random seed")
    common.add_argument("--threads", type=int, help="Worker threads (fallback: SPHERESEG_THREADS)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="Warnings and errors only")
    verbosity.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="sphereseg",
        description="Spherical-coordinate brain tumor segmentation toolkit",
        epilog=EXIT_CODE_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", parents=[common], help="Cartesian -> spherical resampling")
    p.add_argument("input")
    p.add_argument("output", help=".svol or .nii[.gz]; a .json sidecar is written next to it")
    p.add_argument("--origin", default="center", help="X,Y,Z in mm, or 'center'")
    p.add_argument("--grid", help="NR,NT,NP")
    p.add_argument("--r-max-mode", choices=[m.value for m in RadiusMode])
    p.add_argument("--interp", default=Interpolation.TRILINEAR.value, choices=[i.value for i in Interpolation])
    p.add_argument("--labels", action="store_true", help="Input is a label volume")
    p.add_argument("--channel", type=int, default=0, help="Channel of a multichannel input")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("inverse", parents=[common], help="Spherical labels -> Cartesian labels")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--sidecar", help="Defaults to <input>.json")
    p.set_defaults(func=cmd_inverse)

    p = sub.add_parser("origins", parents=[common], help="Origin set of one cascade pass")
    p.add_argument("input", help="Image (pass 1) or label volume (passes 2 and 3)")
    p.add_argument("--pass", dest="pass_index", type=int, choices=[1, 2, 3], default=1)
    p.add_argument("--mode", default=SelectionMode.INFER.value, choices=[m.value for m in SelectionMode])
    p.add_argument("--output", help="JSON file (default: stdout)")
    p.set_defaults(func=cmd_origins)

    p = sub.add_parser("run", parents=[common], help="Full cascade on one case")
    p.add_argument("case_dir")
    p.add_argument("out_dir")
    p.add_argument("--grid", help="NR,NT,NP")
    p.add_argument("--keep-intermediates", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[common], help="Dice, sensitivity, specificity, HD95")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--case-id")
    p.add_argument("--csv", help="Also write the metrics as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("phantom", parents=[common], help="Write a synthetic phantom case")
    p.add_argument("out_dir")
    p.add_argument("--case", default="phantom")
    p.add_argument("--extent", default="240,240,155", help="X,Y,Z in mm")
    p.add_argument("--spacing", default="1,1,1", help="SX,SY,SZ in mm")
    p.add_argument("--noise", type=float, default=0.02)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("demo-polar", parents=[common], help="Rotation/scale effect on a 2D polar transform")
    p.add_argument("input", help="PNG/PGM image or .npy 2D array")
    p.add_argument("output", help="Panel image (.png or .pgm)")
    p.add_argument("--n-r", type=int, default=128)
    p.add_argument("--n-theta", type=int, default=256)
    p.set_defaults(func=cmd_demo_polar)

    p = sub.add_parser("augment", parents=[common], help="Random rotation and zoom of a volume")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--labels", help="Label volume warped with the same parameters")
    p.add_argument("--labels-output")
    p.add_argument("--max-angle", type=float, default=180.0)
    p.add_argument("--zoom-min", type=float, default=0.8)
    p.add_argument("--zoom-max", type=float, default=1.25)
    p.set_defaults(func=cmd_augment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = "WARNING" if args.quiet else "DEBUG" if args.verbose else None
    setup_logging(level)

    try:
        return args.func(args)
    except SphereSegError as e:
        logging.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logging.exception(f"❌ Internal error: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
