"""Command-line entry point.

One config file drives the whole pipeline:

    lfseg gen-data   --config cfg.yaml
    lfseg preprocess --config cfg.yaml
    lfseg train      --config cfg.yaml --branch aerial
    lfseg train      --config cfg.yaml --branch temporal
    lfseg predict    --config cfg.yaml --branch aerial
    lfseg predict    --config cfg.yaml --branch temporal
    lfseg fuse       --config cfg.yaml
    lfseg evaluate   --config cfg.yaml
    lfseg report     --config cfg.yaml
    lfseg benchmark  --config cfg.yaml

Without --config, built-in toy defaults apply. `--set a.b.c=value` overrides
config entries; subcommands skip work whose outputs exist unless --force.
Exit codes: 0 success, 2 configuration error, 3 missing prerequisite, 1 other.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from . import dataset as ds
from . import pipeline
from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3

COMMANDS = ("gen-data", "preprocess", "train", "predict", "fuse",
            "evaluate", "report", "benchmark")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfseg",
        description="Late-fusion dual-branch segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, branch: bool = False, out: bool = False,
            split: bool = False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="YAML experiment config (default: built-in toy)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted-path config override")
        p.add_argument("--force", action="store_true",
                       help="recompute even if outputs exist")
        if branch:
            p.add_argument("--branch", required=True,
                           choices=("aerial", "temporal"))
        if out:
            p.add_argument("--out", default=None, help="output file path")
        if split:
            p.add_argument("--split", default="test",
                           choices=("train", "val", "test"))
        return p

    add("gen-data", "synthesize a dataset manifest")
    add("preprocess", "materialize filtered and monthly-averaged series")
    add("train", "train one branch", branch=True)
    add("predict", "store per-sample class probabilities", branch=True,
        out=True, split=True)
    add("fuse", "fuse stored branch probabilities", out=True, split=True)
    add("evaluate", "score stored probabilities against ground truth",
        split=True)
    add("report", "render IoU tables and confusion heatmaps")
    add("benchmark", "time inference passes", split=True)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    command = args.command
    with pipeline.run_lock(cfg.output_dir):
        outputs: dict = {}
        if command == "gen-data":
            manifest = pipeline.gen_data(cfg, force=args.force)
            outputs["manifest"] = manifest.root / ds.MANIFEST_NAME
            print(f"dataset at {manifest.root} "
                  f"({len(manifest.entries)} samples)")
        elif command == "preprocess":
            n = pipeline.do_preprocess(cfg, force=args.force)
            outputs["preprocessed"] = pipeline.data_dir(cfg)
            print(f"preprocessed {n} samples")
        elif command == "train":
            result = pipeline.do_train(cfg, args.branch, force=args.force,
                                       progress=print)
            ckpt = pipeline.checkpoint_path(cfg, args.branch)
            outputs["checkpoint"] = ckpt
            if result is None:
                print(f"checkpoint {ckpt} exists, skipping (use --force)")
            else:
                print(f"best epoch {result.best_epoch} "
                      f"val mIoU {result.best_val_miou:.4f} -> {ckpt}")
        elif command == "predict":
            path = pipeline.do_predict(cfg, args.branch, split=args.split,
                                       out=args.out, force=args.force)
            outputs["probs"] = path
            print(f"probabilities -> {path}")
        elif command == "fuse":
            path = pipeline.do_fuse(cfg, split=args.split, out=args.out,
                                    force=args.force)
            outputs["fused"] = path
            print(f"fused probabilities -> {path}")
        elif command == "evaluate":
            path = pipeline.do_evaluate(cfg, split=args.split)
            outputs["evaluation"] = path
            print(f"evaluation -> {path}")
        elif command == "report":
            files = pipeline.do_report(cfg)
            outputs.update(files)
            for name, p in files.items():
                print(f"{name}: {p}")
        elif command == "benchmark":
            reports, table = pipeline.do_benchmark(cfg, split=args.split)
            outputs["benchmark"] = cfg.output_dir / "benchmark.json"
            print(table)
        else:
            raise ValueError(f"unhandled command {command!r}")
        write_path = pipeline.write_run_manifest(cfg, command, outputs)
        outputs["run_manifest"] = write_path
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ds.DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
