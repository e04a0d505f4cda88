"""Command-line surface: prune / train / baseline / verify / report.

Exit codes: 0 success, 1 config/validation error, 2 runtime failure. Errors
go to stderr as single `error: ...` lines.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import verify as verify_mod
from .config import load_config
from .errors import ConfigError, FedzoError
from .federation import run_experiment
from .fileio import (load_mask, load_metrics, save_checkpoint, save_mask,
                     save_metrics)
from .layers import model_by_name


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field (repeatable)")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedzo")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="run the foresight pruning phase, emit a mask file")
    _add_config_args(p)
    p.add_argument("--mode", choices=["data-free", "real-data"],
                   help="override prune_mode")
    p.add_argument("--out", default="out.mask", help="mask file path")

    p = sub.add_parser("train", help="full pruning + gradient-free training run")
    _add_config_args(p)
    p.add_argument("--mask", help="skip inline pruning, load this mask file")
    p.add_argument("--metrics", default="metrics.csv")
    p.add_argument("--checkpoint", default="model.ckpt")

    p = sub.add_parser("baseline", help="FedAvg backprop or dense gradient-free baseline")
    _add_config_args(p)
    p.add_argument("--kind", choices=["fedavg", "dense-bp-free"], default="fedavg")
    p.add_argument("--metrics", default="baseline_metrics.csv")
    p.add_argument("--checkpoint", default="baseline.ckpt")

    p = sub.add_parser("verify", help="run the built-in property/oracle checks")
    p.add_argument("--fast", action="store_true", help="skip the slower checks")

    p = sub.add_parser("report", help="summarize one or more metrics CSVs")
    p.add_argument("files", nargs="+")
    return ap


def _cmd_prune(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.mode:
        cfg.prune_mode = args.mode
    result = run_experiment(cfg, prune_only=True)
    save_mask(args.out, result.state.mask, result.model)
    print(f"mask written to {args.out}: density {result.state.mask.density:.4f} "
          f"({int(result.state.mask.bits.sum())}/{result.state.mask.n})")
    return 0


def _cmd_train(args, method=None) -> int:
    cfg = load_config(args.config, args.set)
    if method is not None:
        cfg.method = method
    mask = None
    if getattr(args, "mask", None):
        model = model_by_name(cfg.model, cfg.classes, dims=cfg.dims)
        mask = load_mask(args.mask, model)
    result = run_experiment(cfg, mask=mask)
    save_metrics(args.metrics, result.metrics)
    save_checkpoint(args.checkpoint, result.state.params, result.state.mask,
                    result.model)
    final = result.metrics[-1] if result.metrics else None
    if final:
        print(f"finished round {final.round}: loss {final.loss:.4f} "
              f"accuracy {final.accuracy:.4f}")
    print(f"metrics -> {args.metrics}; checkpoint -> {args.checkpoint}")
    return 0


def _cmd_baseline(args) -> int:
    if args.kind == "fedavg":
        return _cmd_train(args, method="fedavg")
    # dense gradient-free: pruning disabled
    args.set = list(args.set) + ["density=1", "t_p=0"]
    return _cmd_train(args, method="bp-free")


def _cmd_report(args) -> int:
    for path in args.files:
        ms = load_metrics(path)
        train = [m for m in ms if m.phase == "train"]
        best = max((m.accuracy for m in ms), default=float("nan"))
        last = ms[-1]
        print(f"{path}: rounds={len(ms)} (train={len(train)}) "
              f"final_acc={last.accuracy:.4f} best_acc={best:.4f} "
              f"final_loss={last.loss:.4f} flops={last.flops_cum:.3e} "
              f"up_bits={last.up_bits} down_bits={last.down_bits} "
              f"peak_mem={last.peak_mem_model_bytes}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "prune":
            return _cmd_prune(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "baseline":
            return _cmd_baseline(args)
        if args.command == "verify":
            return verify_mod.run_all(fast=args.fast)
        if args.command == "report":
            return _cmd_report(args)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FedzoError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
