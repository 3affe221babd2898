"""Command-line front end: stainform transfer | balance | metrics."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import imgio
from .metrics import channel_stats, chi_square_distance, luminance_histogram
from .pipeline import JobConfig, run_balance_batch, run_transfer_batch

PRESETS = {"paper": (0.001, 0.4), "he": (0.125, 2.0)}

_BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
               "false": False, "no": False, "off": False, "0": False}


def parse_config_file(path) -> dict:
    """Plain `key = value` lines; `#` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected `key = value`, got {raw.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def _coerce(name: str, value: str, target_type) -> object:
    if target_type is bool:
        try:
            return _BOOL_WORDS[value.lower()]
        except KeyError:
            raise ValueError(f"config key {name}: expected a boolean, got {value!r}") from None
    try:
        return target_type(value)
    except ValueError:
        raise ValueError(f"config key {name}: cannot parse {value!r} as {target_type.__name__}") from None


_FIELD_TYPES = {f.name: type(f.default) for f in fields(JobConfig) if f.name not in ("sources", "references")}


def build_job_config(args) -> JobConfig:
    """Apply precedence: CLI flag > config file key > built-in default."""
    config = JobConfig(sources=list(args.source), references=list(getattr(args, "reference", []) or []),
                       out_dir=args.out)
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    if "preset" in file_values:
        config.lambda_l, config.lambda_nl = PRESETS[file_values.pop("preset")]
    for key, raw in file_values.items():
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        setattr(config, key, _coerce(key, raw, _FIELD_TYPES[key]))
    if getattr(args, "preset", None):
        config.lambda_l, config.lambda_nl = PRESETS[args.preset]
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(config, key, flag)
    if getattr(args, "threads", None) is None and "threads" not in file_values:
        env = os.environ.get("STAINFORM_THREADS")
        if env:
            config.threads = int(env)
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stainform",
        description="Transfer the color/brightness appearance of reference slide images onto sources.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transfer", help="batch stain transfer toward reference images")
    t.add_argument("--source", nargs="+", required=True, metavar="PATH",
                   help="source image files or directories")
    t.add_argument("--reference", nargs="+", required=True, metavar="PATH",
                   help="1-3 reference images (or directories expanding to 1-3)")
    t.add_argument("--out", required=True, metavar="DIR", help="output directory")
    t.add_argument("--config", metavar="FILE", help="key = value config file")
    t.add_argument("--layer", type=int, help="resolution layer 1-5 (default 1)")
    t.add_argument("--features", help="builtin | fmap:<dir> (default builtin)")
    t.add_argument("--enhance", help="none | cluster | segmap:<dir> (default cluster)")
    t.add_argument("--cluster-k", type=int, dest="cluster_k", help="clusters for enhancement (default 5)")
    t.add_argument("--lambda-l", type=float, dest="lambda_l", help="local smoothness weight")
    t.add_argument("--lambda-nl", type=float, dest="lambda_nl", help="non-local smoothness weight")
    t.add_argument("--preset", choices=sorted(PRESETS), help="paper: 0.001/0.4, he: 0.125/2.0")
    t.add_argument("--luminance", choices=["bt601", "bt709"], help="luminance coefficients (default bt601)")
    t.add_argument("--patch-size", type=int, dest="patch_size", help="odd patch size (default 3)")
    t.add_argument("--pm-iters", type=int, dest="pm_iters", help="search iterations (default 5)")
    t.add_argument("--seed", type=int, help="RNG seed (default 0)")
    t.add_argument("--threads", type=int, help="parallel batch items (default 1 or $STAINFORM_THREADS)")
    t.add_argument("--dump-guidance", action="store_const", const=True, default=None,
                   dest="dump_guidance", help="write <stem>.guidance.png")
    t.add_argument("--dump-ab", action="store_const", const=True, default=None,
                   dest="dump_ab", help="write <stem>.a.fmap / <stem>.b.fmap")
    t.add_argument("--dump-nnf", action="store_const", const=True, default=None,
                   dest="dump_nnf", help="write <stem>.nnf_fwd.fmap / <stem>.nnf_bwd.fmap")

    b = sub.add_parser("balance", help="gray-world color balance baseline")
    b.add_argument("--source", nargs="+", required=True, metavar="PATH")
    b.add_argument("--out", required=True, metavar="DIR")

    m = sub.add_parser("metrics", help="print a metrics CSV row for an image pair")
    m.add_argument("image_a")
    m.add_argument("image_b")
    return parser


def cmd_metrics(args) -> int:
    try:
        a = imgio.read_image(args.image_a)
        b = imgio.read_image(args.image_b)
    except Exception as exc:
        print(f"stainform: {exc}", file=sys.stderr)
        return 1
    dist = chi_square_distance(luminance_histogram(a), luminance_histogram(b))
    means_a, stds_a = channel_stats(a)
    means_b, stds_b = channel_stats(b)
    header = ["image_a", "image_b", "chi_square"]
    header += [f"{w}_{c}_a" for w in ("mean", "std") for c in "rgb"]
    header += [f"{w}_{c}_b" for w in ("mean", "std") for c in "rgb"]
    values = [args.image_a, args.image_b, f"{dist:.6f}"]
    values += [f"{v:.6f}" for v in (*means_a, *stds_a, *means_b, *stds_b)]
    print(",".join(header))
    print(",".join(values))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "metrics":
        return cmd_metrics(args)
    try:
        config = build_job_config(args)
        if args.command == "balance":
            return run_balance_batch(config)
        status, _ = run_transfer_batch(config)
        return status
    except Exception as exc:
        print(f"stainform: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
