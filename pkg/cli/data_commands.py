"""gen-phantom and make-pseudo-lr subcommands"""

import logging
import os
from dataclasses import replace

from cli.settings import add_setting
from errors import ValidationError
from services.pair_manager import THICK_SUFFIX, THIN_SUFFIX
from volumes.augment import make_pseudo_lr, pseudo_lr_factors
from volumes.phantom import generate_phantom
from volumes.volume import read_volume, write_volume

logger = logging.getLogger(__name__)


def register(subparsers):
    p = subparsers.add_parser("gen-phantom", help="Write a synthetic thin/thick phantom pair")
    add_setting(p, "--seed", "phantom.seed", "Phantom seed", type=int)
    add_setting(p, "--dims", "phantom.dims", "Thin volume extents D,H,W")
    add_setting(p, "--thin-spacing", "phantom.thin_spacing_mm", "Thin slice spacing in mm", type=float)
    add_setting(p, "--thick-spacing", "phantom.thick_spacing_mm", "Thick slice spacing in mm", type=float)
    p.add_argument("--thick-factor", type=int, default=None,
                   help="Thick spacing as a multiple of the thin spacing; overrides --thick-spacing (default: %(default)s)")
    add_setting(p, "--ellipsoids", "phantom.n_ellipsoids", "Number of ellipsoids", type=int)
    add_setting(p, "--tubes", "phantom.n_tubes", "Number of tubes", type=int)
    add_setting(p, "--noise-sigma", "phantom.noise_sigma", "Additive noise sigma in HU", type=float)
    add_setting(p, "-o", "paths.data", "Output directory")
    p.add_argument("--stem", default=None, help="File stem (default: phantom-<seed>)")
    p.set_defaults(handler=cmd_gen_phantom)

    p = subparsers.add_parser("make-pseudo-lr", help="Write thicker-slice copies of a thin volume")
    p.add_argument("-i", "--input", required=True, help="Thin volume (.vsrv)")
    add_setting(p, "-o", "paths.output", "Output directory")
    add_setting(p, "--max-thickness", "train.pseudo_max_thickness_mm", "Largest slice thickness in mm", type=float)
    add_setting(p, "--min-slices", "train.pseudo_min_slices", "Fewest slices a copy may keep", type=int)
    p.set_defaults(handler=cmd_make_pseudo_lr)


def cmd_gen_phantom(args, config):
    """Generate a phantom pair and write ``<stem>.thin.vsrv`` and ``<stem>.thick.vsrv``"""
    spec = config.phantom
    if args.thick_factor is not None:
        if args.thick_factor < 1:
            raise ValidationError(f"--thick-factor must be >= 1, got {args.thick_factor}")
        spec = replace(spec, thick_spacing_mm=args.thick_factor * spec.thin_spacing_mm).validate()
    thin, thick = generate_phantom(spec)
    stem = args.stem or f"phantom-{spec.seed}"
    out_dir = config.paths.data
    thin_path = os.path.join(out_dir, stem + THIN_SUFFIX)
    thick_path = os.path.join(out_dir, stem + THICK_SUFFIX)
    write_volume(thin, thin_path)
    write_volume(thick, thick_path)
    print(f"thin   {thin_path}: {thin.summary()}")
    print(f"thick  {thick_path}: {thick.summary()}")
    return 0


def _stem(path):
    name = os.path.basename(path)
    for suffix in (THIN_SUFFIX, ".vsrv"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def cmd_make_pseudo_lr(args, config):
    """Write one file per admissible thickening factor and report every decision"""
    volume = read_volume(args.input)
    max_mm = config.train.pseudo_max_thickness_mm
    min_slices = config.train.pseudo_min_slices
    for d in pseudo_lr_factors(volume.depth, volume.spacing_mm[0], max_mm, min_slices):
        verdict = "chosen" if d.accepted else f"rejected ({d.reason})"
        print(f"k={d.factor}: {d.depth} slices at {d.thickness_mm:g} mm, {verdict}")
    outputs = make_pseudo_lr(volume, max_mm, min_slices)
    if not outputs:
        logger.warning("No admissible factor for %s (spacing %g mm, %d slices)", args.input, volume.spacing_mm[0], volume.depth)
        print("no pseudo low-resolution volumes written")
        return 0
    stem = _stem(args.input)
    for pseudo in outputs:
        factor = int(round(pseudo.spacing_mm[0] / volume.spacing_mm[0]))
        path = os.path.join(config.paths.output, f"{stem}.x{factor}.vsrv")
        write_volume(pseudo, path)
        print(f"wrote {path}: {pseudo.summary()}")
    return 0
