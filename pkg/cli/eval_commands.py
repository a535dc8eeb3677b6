"""infer, eval and slice-sim subcommands"""

import logging
import os
from dataclasses import replace

from cli.settings import add_setting
from errors import ShapeError, ValidationError, VolumeFormatError
from network.checkpoint import load_checkpoint
from network.tvsrn import TVSRNv2
from services.inference import baseline_interpolate, extract_windows, infer
from services.metrics import evaluate_set, format_reports, slice_similarity_study
from services.pair_manager import PairManager
from storage import atomic_write
from volumes.volume import denormalize, normalize, read_volume, write_volume

logger = logging.getLogger(__name__)

SR_SUFFIX = ".sr.vsrv"


def add_infer_flags(p):
    add_setting(p, "--window-depth", "infer.window_depth", "Slices per inference window", type=int)
    add_setting(p, "--overlap", "infer.overlap", "Slices shared by neighbouring windows", type=int)
    add_setting(p, "--workers", "infer.workers", "Windows predicted concurrently", type=int)


def register(subparsers):
    p = subparsers.add_parser("infer", help="Super-resolve a thick-slice volume")
    add_setting(p, "--checkpoint", "paths.checkpoint", "Trained checkpoint")
    p.add_argument("-i", "--input", required=True, help="Thick-slice volume (.vsrv)")
    p.add_argument("-o", "--output", required=True, help="Output volume (.vsrv)")
    add_infer_flags(p)
    add_setting(p, "--upsample", "infer.upsample", "Expected depth factor; must match the checkpoint", type=int)
    p.set_defaults(handler=cmd_infer)

    p = subparsers.add_parser("eval", help="Score super-resolved volumes against thin-slice references")
    add_setting(p, "--data", "paths.data", "Directory of pairs, or a pairs.json manifest")
    p.add_argument("--checkpoint", default=None,
                   help="Run this model on each thick volume; without it <stem>.sr.vsrv files are scored (default: %(default)s)")
    p.add_argument("--predictions", default=None, help="Directory holding <stem>.sr.vsrv (default: the data directory)")
    p.add_argument("--with-baseline", action="store_true", help="Add a cubic interpolation row (default: %(default)s)")
    add_infer_flags(p)
    add_setting(p, "--upsample", "infer.upsample", "Depth factor for the baseline when no checkpoint is given", type=int)
    add_setting(p, "-o", "paths.output", "Directory for eval.jsonl")
    p.set_defaults(handler=cmd_eval)

    p = subparsers.add_parser("slice-sim", help="Similarity of thick slices to thin slices at 0, 1 and 2 mm")
    add_setting(p, "--data", "paths.data", "Directory of pairs, or a pairs.json manifest")
    add_setting(p, "-o", "paths.output", "Directory for slice_similarity.jsonl")
    p.set_defaults(handler=cmd_slice_sim)


def _load_model(path, spec, explicit_upsample):
    params, model_config = load_checkpoint(path)
    if explicit_upsample is not None and explicit_upsample != model_config.upsample:
        raise ValidationError(
            f"{path} was trained for r={model_config.upsample}, but --upsample {explicit_upsample} was requested"
        )
    return TVSRNv2(model_config, params), replace(spec, upsample=model_config.upsample)


def _check_model_input(model, volume):
    config = model.config
    if config.variant == "vit_encoder":
        _, height, width = volume.dims
        if height % config.vit_patch or width % config.vit_patch:
            raise ValidationError(
                f"{volume.name}: in-plane size {height}x{width} is not a multiple of the {config.vit_patch}-voxel patch"
            )


def cmd_infer(args, config):
    """Write the super-resolved volume and print the window count and output dims"""
    model, spec = _load_model(config.paths.checkpoint, config.infer, getattr(args, "infer.upsample"))
    volume = read_volume(args.input)
    _check_model_input(model, volume)
    windows = extract_windows(normalize(volume) if volume.unit == "raw_hu" else volume, spec)
    result = infer(model, volume, spec)
    if volume.unit == "raw_hu":
        result = denormalize(result)
    write_volume(result, args.output)
    print(f"windows {len(windows)} (depth {spec.window_depth}, overlap {spec.overlap}, r {spec.upsample})")
    print(f"output {args.output}: {result.summary()}")
    return 0


def _normalized(v):
    return normalize(v) if v.unit == "raw_hu" else v


def _aligned(sr, thin):
    """Crop the thin reference to the predicted depth; slab means drop a partial trailing slab"""
    sr, thin = _normalized(sr), _normalized(thin)
    if thin.depth > sr.depth and thin.dims[1:] == sr.dims[1:]:
        thin = thin.replace(voxels=thin.voxels[: sr.depth])
    if sr.dims != thin.dims:
        raise ShapeError(f"prediction {sr.dims} and reference {thin.dims} differ")
    return sr, thin


def cmd_eval(args, config):
    """Score every resolvable pair; pairs that cannot be scored are skipped with a warning"""
    manager = PairManager.from_path(config.paths.data)
    for path in manager.unpaired:
        logger.warning("Skipping unpaired file %s", path)
    model, spec = None, config.infer
    if args.checkpoint:
        model, spec = _load_model(args.checkpoint, config.infer, getattr(args, "infer.upsample"))
    predictions_dir = args.predictions or (config.paths.data if os.path.isdir(config.paths.data) else os.path.dirname(config.paths.data))

    model_pairs, baseline_pairs = [], []
    for pair in manager.get_all_pairs():
        try:
            thick, thin = pair.load()
            if model is not None:
                _check_model_input(model, thick)
                sr = infer(model, thick, spec)
            else:
                sr = read_volume(os.path.join(predictions_dir, pair.stem + SR_SUFFIX), name=f"{pair.stem}.sr")
            scored = _aligned(sr, thin)
            baseline = _aligned(baseline_interpolate(thick, spec.upsample), thin) if args.with_baseline else None
        except (ShapeError, ValidationError, VolumeFormatError, OSError) as e:
            logger.warning("Skipping pair %s: %s", pair.stem, e)
            continue
        model_pairs.append(scored)
        if baseline is not None:
            baseline_pairs.append(baseline)
    if not model_pairs:
        raise ValidationError("no pair could be evaluated")

    reports = [evaluate_set(model_pairs, label="model")]
    if args.with_baseline:
        reports.append(evaluate_set(baseline_pairs, label="baseline (cubic)"))
    path = os.path.join(config.paths.output, "eval.jsonl")
    with atomic_write(path, "w") as f:
        f.write(format_reports(reports))
    for report in reports:
        print(report.table_row())
    print(f"report {path} ({len(model_pairs)} pair(s))")
    return 0


def cmd_slice_sim(args, config):
    """Run the slice-distance similarity study on every pair"""
    manager = PairManager.from_path(config.paths.data)
    reports = []
    for pair in manager.get_all_pairs():
        try:
            thick, thin = pair.load()
            report = slice_similarity_study(_normalized(thick), _normalized(thin))
        except (ShapeError, ValidationError, VolumeFormatError, OSError) as e:
            logger.warning("Skipping pair %s: %s", pair.stem, e)
            continue
        report.label = pair.stem
        reports.append(report)
        for group in report.groups.values():
            print(f"{pair.stem:<16} {group.name:<6} {group.offset_mm:g} mm  "
                  f"PSNR {group.psnr.describe()}  SSIM {group.ssim.describe(4)}  skipped {group.skipped}")
    if not reports:
        raise ValidationError("no pair could be compared")
    path = os.path.join(config.paths.output, "slice_similarity.jsonl")
    with atomic_write(path, "w") as f:
        f.write(format_reports(reports))
    print(f"report {path}")
    return 0
