"""Command-line entry point: ``adasti <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .data import (
    build_adjacency,
    generate_block_mask,
    generate_random_mask,
    load_matrix_csv,
    load_series_csv,
    save_mask_csv,
    save_series_csv,
)
from .errors import ContractError, ParseError
from .metrics import metrics_report
from .training import VARIANTS, evaluate, impute_series, run_ablation, train


def _load_mask(path, shape):
    if not path:
        return None
    mask = load_matrix_csv(path)
    if mask.shape != shape:
        raise ContractError(f"mask shape {mask.shape} does not match data {shape}")
    return mask


def cmd_train(args):
    cfg = load_config(args.config)
    if args.epochs:
        cfg = cfg.with_(epochs=args.epochs)
    ckpt = train(cfg)
    out = Path(args.out or Path(cfg.output_dir) / "checkpoint.adasti")
    save_checkpoint(ckpt, out)
    print(f"saved {out} (best epoch {ckpt.history['best_epoch']})")


def cmd_impute(args):
    ckpt = load_checkpoint(args.checkpoint)
    table = load_series_csv(args.data, ckpt.config.missing_token)
    mask = _load_mask(args.mask, table.shape)
    filled = impute_series(ckpt, table, mask, args.k, args.seed)
    save_series_csv(args.out, filled, table.node_ids, ckpt.config.missing_token)
    print(f"wrote {args.out}")


def cmd_evaluate(args):
    ckpt = load_checkpoint(args.checkpoint)
    if args.data:
        # targets: entries present in the data but hidden by the mask
        table = load_series_csv(args.data, ckpt.config.missing_token)
        mask = _load_mask(args.mask, table.shape)
        if mask is None:
            raise ContractError("--mask is required together with --data")
        filled = impute_series(ckpt, table, mask, args.k)
        targets = table.mask * (1.0 - mask)
        truth = np.nan_to_num(table.values)
        report = metrics_report(
            filled.T, truth.T, targets.T, config_fingerprint=ckpt.fingerprint,
            seed=ckpt.config.seed, label="adasti",
        )
    else:
        report = evaluate(ckpt, k=args.k)
    if args.report:
        report.save(args.report)
    print(json.dumps({"mae": report.mae, "rmse": report.rmse, "n_targets": report.n_targets}))


def cmd_make_masks(args):
    table = load_series_csv(args.data)
    T, N = table.shape
    if args.pattern == "random":
        mask = generate_random_mask((T, N), args.rate, args.seed)
    else:
        if not args.graph:
            raise ContractError("--graph is required for block masks")
        dist = load_matrix_csv(args.graph)
        graph = build_adjacency(dist, args.threshold, table.node_ids)
        mask = generate_block_mask((N, T), args.rate, args.nv, args.nt, graph, args.seed).T
    save_mask_csv(args.out, mask, table.node_ids)
    print(f"wrote {args.out}: {1 - mask.mean():.4f} missing")


def cmd_ablate(args):
    cfg = load_config(args.config)
    if args.epochs:
        cfg = cfg.with_(epochs=args.epochs)
    report, ckpt = run_ablation(cfg, args.variant, k=args.k)
    out = Path(cfg.output_dir) / args.variant
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out / "checkpoint.adasti")
    report.save(out / "report.json")
    print(json.dumps({"variant": args.variant, "mae": report.mae, "rmse": report.rmse}))


def build_parser():
    p = argparse.ArgumentParser(prog="adasti")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a model from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", help="checkpoint path (default: <output_dir>/checkpoint.adasti)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("impute", help="fill missing entries of a CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mask", help="extra 0/1 mask, timestamps x nodes (1 = observed)")
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_impute)

    s = sub.add_parser("evaluate", help="score a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", help="CSV with ground truth; omit to use the config's test split")
    s.add_argument("--mask")
    s.add_argument("--report")
    s.add_argument("--k", type=int)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("make-masks", help="write an evaluation mask for a CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--pattern", choices=("random", "block"), default="random")
    s.add_argument("--rate", type=float, default=0.25)
    s.add_argument("--nv", type=int, default=3)
    s.add_argument("--nt", type=int, default=6)
    s.add_argument("--graph", help="distance matrix CSV (block pattern)")
    s.add_argument("--threshold", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_masks)

    s = sub.add_parser("ablate", help="train and score one ablated variant")
    s.add_argument("--config", required=True)
    s.add_argument("--variant", choices=VARIANTS, required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--k", type=int)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s"
    )
    try:
        args.func(args)
    except (ContractError, ParseError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
