"""Command-line entry point: ``metafuse <subcommand> ...``.

Exit codes: 0 success, 2 configuration/usage, 3 data, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io, pipeline
from .errors import ConfigError, DataError, MetafuseError
from .psf import KINDS, make_psf_grid
from .scenes import standard_scene

logger = logging.getLogger("metafuse")


def _pair_floats(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return a, b


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    return w, h


def _global_options(p, default):
    # shared by the top-level parser and every subcommand so globals may go either side
    p.add_argument("--config", default=default, help="INI configuration file")
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--engine", choices=("direct", "tiled"), default=default)
    p.add_argument("--outdir", default=default)
    p.add_argument("--no-align", dest="no_align", action="store_true", default=default)
    p.add_argument("--no-dam", dest="no_dam", action="store_true", default=default)
    p.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metafuse",
                                     description="Dual-camera metalens restoration pipeline")
    _global_options(parser, None)
    shared = argparse.ArgumentParser(add_help=False)
    _global_options(shared, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", parents=[shared], help="write a synthetic test scene")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("make-psf", parents=[shared], help="write a synthetic PSF grid")
    p.add_argument("--kind", choices=KINDS, default="gaussian-ramp")
    p.add_argument("--grid", type=int, default=5, help="anchors per side")
    p.add_argument("--kernel", type=int, default=11, help="odd kernel size")
    p.add_argument("--size", type=_size, default=(128, 128), help="image size WxH")
    p.add_argument("--sigma-center", type=float, default=0.5)
    p.add_argument("--sigma-edge", type=float, default=1.5)
    p.add_argument("--astigmatism", type=float, default=1.0)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--chromatic", type=_float_list, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", parents=[shared], help="simulate both measurements")
    p.add_argument("--scene")
    p.add_argument("--psf-c", dest="psf_c")
    p.add_argument("--psf-s", dest="psf_s")
    p.add_argument("--sigma", type=float)
    p.add_argument("--luminance", action="store_true", default=None)
    p.add_argument("--misalign", type=_pair_floats, help="dx,dy shift applied to the color cue")
    p.add_argument("--tone-gamma", dest="tone_gamma", type=float)

    p = sub.add_parser("restore", parents=[shared], help="restore from a measurement pair")
    p.add_argument("--y-c", dest="y_c")
    p.add_argument("--y-s", dest="y_s")
    p.add_argument("--psf-c", dest="psf_c")
    p.add_argument("--psf-s", dest="psf_s")
    p.add_argument("--domain", help="domain statistics JSON written by synth")
    p.add_argument("--sigma", type=float, help="noise level assumed by pre-deblurring")
    p.add_argument("--align-model", dest="align_model",
                   choices=("translation", "affine", "homography"))
    p.add_argument("--align-levels", dest="align_levels", type=int)
    p.add_argument("--align-iters", dest="align_iters", type=int)
    p.add_argument("--kout", type=int)
    p.add_argument("--lambda-scale", dest="lambda_scale", type=float)
    p.add_argument("--pyramid-levels", dest="pyramid_levels", type=int)
    p.add_argument("--gamma-grid", dest="gamma_grid", type=_float_list)
    p.add_argument("--timesteps", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--predictor", choices=pipeline.PREDICTORS)
    p.add_argument("--prior-sigma", dest="prior_sigma", type=float)
    p.add_argument("--from-dumps", dest="from_dumps", help="resume from a stages/ directory")
    p.add_argument("--no-dumps", dest="no_dumps", action="store_true")
    p.add_argument("--no-figures", dest="no_figures", action="store_true")

    p = sub.add_parser("eval", parents=[shared], help="score restorations against ground truth")
    p.add_argument("--pair", nargs=3, action="append", metavar=("NAME", "RESTORED", "GT"),
                   required=True)
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--no-figure", dest="no_figure", action="store_true")

    p = sub.add_parser("verify-manifest", parents=[shared], help="check artifact hashes")
    p.add_argument("manifest", nargs="?", help="manifest file or output directory")
    return parser


def _config(args, **extra) -> pipeline.PipelineConfig:
    keys = {k: getattr(args, k, None) for k in ("seed", "engine", "outdir")}
    if getattr(args, "no_align", None):
        keys["align"] = False
    if getattr(args, "no_dam", None):
        keys["dam"] = False
    keys.update(extra)
    return pipeline.load_config(getattr(args, "config", None), **keys)


def _run(args) -> int:
    cmd = args.command
    if cmd == "make-scene":
        io.save_image(standard_scene(args.size, args.scene_seed), args.out)
        return 0
    if cmd == "make-psf":
        w, h = args.size
        grid = make_psf_grid(args.kind, args.grid, args.grid, args.kernel, w, h,
                             args.sigma_center, args.sigma_edge, args.astigmatism,
                             args.channels, args.chromatic)
        io.save_psf_grid(grid, args.out)
        return 0
    if cmd == "synth":
        dx, dy = args.misalign if args.misalign else (None, None)
        cfg = _config(args, scene=args.scene, psf_c=args.psf_c, psf_s=args.psf_s,
                      sigma=args.sigma, luminance=args.luminance, misalign_dx=dx,
                      misalign_dy=dy, tone_gamma=args.tone_gamma)
        for path in pipeline.run_synth(cfg).values():
            print(path)
        return 0
    if cmd == "restore":
        fields = ("y_c", "y_s", "psf_c", "psf_s", "domain", "align_model", "align_levels",
                  "align_iters", "kout", "lambda_scale", "pyramid_levels", "gamma_grid",
                  "timesteps", "eta", "predictor", "prior_sigma")
        extra = {k: getattr(args, k) for k in fields}
        extra["deblur_sigma"] = args.sigma
        if args.no_dumps:
            extra["dumps"] = False
        if args.no_figures:
            extra["figures"] = False
        cfg = _config(args, **extra)
        for path in pipeline.run_restore(cfg, args.from_dumps).values():
            print(path)
        return 0
    if cmd == "eval":
        rows = pipeline.run_eval(args.pair, args.out, figure=not args.no_figure)
        for name, p, s, _ in rows:
            print(f"{name}: psnr={p:.3f} dB ssim={s:.4f}")
        return 0
    if cmd == "verify-manifest":
        target = args.manifest or getattr(args, "outdir", None) or "."
        bad = pipeline.verify_manifest(Path(target))
        for path in bad:
            print(f"MISMATCH {path}")
        if bad:
            raise DataError(f"{len(bad)} artifact(s) failed verification")
        print("manifest ok")
        return 0
    raise ConfigError(f"unknown command {cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", None) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except MetafuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
