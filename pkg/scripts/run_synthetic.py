"""Train and score AdaSTI against the mean/TLI baselines on the ring benchmark.

Usage:
    python scripts/run_synthetic.py --config configs/synthetic_desk.cfg [--ablations]
"""
import argparse
import json
import logging
import time
from pathlib import Path

from adasti.checkpoint import save_checkpoint
from adasti.config import load_config
from adasti.training import (
    VARIANTS,
    evaluate_baseline,
    evaluate_split,
    prepare_experiment,
    run_ablation,
    train,
)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--config", default="configs/synthetic_desk.cfg")
    parser.add_argument("--ablations", action="store_true")
    parser.add_argument("--epochs", type=int)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    if args.epochs:
        cfg = cfg.with_(epochs=args.epochs)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = prepare_experiment(cfg)

    results = {}
    for which in ("mean", "tli"):
        results[which] = evaluate_baseline(exp.test, cfg, which)

    start = time.perf_counter()
    ckpt = train(cfg, exp)
    save_checkpoint(ckpt, out / "checkpoint.adasti")
    results["adasti"] = evaluate_split(ckpt.build_model(), exp.test, cfg)
    print(f"full model: {time.perf_counter() - start:.0f}s, history {json.dumps(ckpt.history)}")

    if args.ablations:
        for variant in VARIANTS:
            results[variant], _ = run_ablation(cfg, variant, exp)

    for name, rep in results.items():
        print(f"{name:>20}: MAE {rep.mae:.4f}  RMSE {rep.rmse:.4f}  ({rep.wall_clock:.0f}s)")
        rep.save(out / f"report_{name}.json")


if __name__ == "__main__":
    main()
