"""Train the synthetic benchmark at several auxiliary-loss weights.

Usage:
    python scripts/sweep_lambda.py --config configs/synthetic_desk.cfg --lams 0 0.1 1 10
"""
import argparse
import logging
from pathlib import Path

from adasti.config import load_config
from adasti.training import evaluate_split, prepare_experiment, train


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--config", default="configs/synthetic_desk.cfg")
    parser.add_argument("--lams", type=float, nargs="+", default=[0.0, 0.1, 1.0, 10.0])
    parser.add_argument("--epochs", type=int)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = load_config(args.config)
    if args.epochs:
        base = base.with_(epochs=args.epochs)
    exp = prepare_experiment(base)
    out = Path(base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for lam in args.lams:
        cfg = base.with_(lam=lam)
        ckpt = train(cfg, exp)
        rep = evaluate_split(ckpt.build_model(), exp.test, cfg, label=f"lam={lam:g}")
        rep.save(out / f"report_lam{lam:g}.json")
        val = min(v for _, v in ckpt.history["val_mae"])
        rows.append((lam, val, rep.mae, rep.rmse))
        print(f"lam {lam:<6g} val MAE {val:.4f}  test MAE {rep.mae:.4f}  RMSE {rep.rmse:.4f}",
              flush=True)
    # selection uses validation error only
    best = min(rows, key=lambda r: r[1])
    print(f"best lam by validation: {best[0]:g} (val MAE {best[1]:.4f}, test MAE {best[2]:.4f})")


if __name__ == "__main__":
    main()
