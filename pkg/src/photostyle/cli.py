"""Command-line driver.

Subcommands:
  transfer run --config FILE [--lambda X --gamma Y --seed N --out DIR]
  transfer baseline-reinhard --input A --style B --out C
  transfer correspondence --output-image O --style S --layer L --out C.png
  transfer validate --config FILE

Exit codes: 0 success, 1 runtime failure, 2 configuration/input error.
The PHOTOSTYLE_LOG_LEVEL environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .baselines import reinhard_transfer
from .config import config_json, load_config
from .errors import (
    ConfigError,
    FeatureFileError,
    LabelError,
    PhotoStyleError,
    PngDecodeError,
    UnsupportedPngError,
)
from .features import (
    DEFAULT_CORRESPONDENCE_LAYER,
    ExtractorSpec,
    extract_features,
    patch_correspondence,
)
from .image import load_png, save_png
from .pipeline import run_transfer

# malformed inputs and configs exit 2; failures mid-optimization exit 1
_INPUT_ERRORS = (
    ConfigError,
    LabelError,
    PngDecodeError,
    UnsupportedPngError,
    FeatureFileError,
    FileNotFoundError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transfer",
        description="Photorealistic style transfer and diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the two-stage transfer pipeline")
    run.add_argument("--config", required=True, help="TOML run configuration")
    run.add_argument("--lambda", dest="lam", type=float, default=None,
                     help="override the photorealism weight")
    run.add_argument("--gamma", type=float, default=None,
                     help="override the style weight")
    run.add_argument("--seed", type=int, default=None,
                     help="override the optimizer seed")
    run.add_argument("--out", default=None, help="override the output directory")

    base = sub.add_parser("baseline-reinhard", help="global color-statistics transfer")
    base.add_argument("--input", required=True)
    base.add_argument("--style", required=True)
    base.add_argument("--out", required=True)

    corr = sub.add_parser("correspondence", help="nearest-style-patch diagnostic map")
    corr.add_argument("--output-image", required=True)
    corr.add_argument("--style", required=True)
    corr.add_argument("--layer", default=DEFAULT_CORRESPONDENCE_LAYER)
    corr.add_argument("--out", required=True)
    corr.add_argument("--patch", type=int, default=3)
    corr.add_argument("--seed", type=int, default=0)
    corr.add_argument("--features-output", default=None,
                      help="FEAT1 file with precomputed output-image features")
    corr.add_argument("--features-style", default=None,
                      help="FEAT1 file with precomputed style features")

    val = sub.add_parser("validate", help="validate a config and echo it")
    val.add_argument("--config", required=True)
    return parser


def _cmd_run(args) -> int:
    overrides = {}
    if args.lam is not None:
        overrides["lambda"] = args.lam
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    config = load_config(args.config, overrides)
    run_transfer(config)
    return 0


def _cmd_baseline(args) -> int:
    result = reinhard_transfer(load_png(args.input), load_png(args.style))
    save_png(result, args.out)
    return 0


def _cmd_correspondence(args) -> int:
    def feats(image_path, feat_path):
        if feat_path is not None:
            spec = ExtractorSpec(kind="file", path=feat_path)
            return extract_features(None, spec, [args.layer])[0]
        spec = ExtractorSpec(seed=args.seed)
        return extract_features(load_png(image_path), spec, [args.layer])[0]

    out_feats = feats(args.output_image, args.features_output)
    style_feats = feats(args.style, args.features_style)
    corr = patch_correspondence(out_feats, style_feats, patch=args.patch)
    save_png(corr, args.out)
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    print(config_json(config))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PHOTOSTYLE_LOG_LEVEL", "WARNING"))
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "baseline-reinhard": _cmd_baseline,
        "correspondence": _cmd_correspondence,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except PhotoStyleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
