#!/usr/bin/env python3
"""Run the paired ablation suites and write one summary CSV per suite.

    python scripts/run_ablations.py --suites dem initial-budget --out runs/ablations
    python scripts/run_ablations.py --suites dem --task teacher   # DEM on the regression task

The dem suite defaults to the classification task; the other two use the
heterogeneous teacher.
"""

import argparse
import time
from pathlib import Path

from dora.ablation import SUITES, run_suite
from dora.config import RunConfig, load_config

DEFAULT_TASK = {"dem": "classification", "initial-budget": "teacher", "uniform-vs-adaptive": "teacher"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--suites", nargs="+", choices=SUITES, default=list(SUITES))
    ap.add_argument("--config", help="base config (defaults apply otherwise)")
    ap.add_argument("--task", choices=("teacher", "classification"), help="override the per-suite task")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/ablations")
    args = ap.parse_args()

    base = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for suite in args.suites:
        cfg = base.replace(task=args.task or DEFAULT_TASK[suite])
        seeds = [cfg.train.seed + k for k in range(args.seeds)]
        start = time.time()
        result = run_suite(suite, cfg, seeds, args.workers)
        path = out / f"{suite}_{cfg.task.task}.csv"
        path.write_text(result.to_csv())
        print(f"{suite} on {cfg.task.task} ({time.time() - start:.0f}s) -> {path}")
        for arm in result.arms:
            print(f"  {arm:>8}  loss {result.mean(arm, 'valid_loss'):.5f}  "
                  f"acc {result.mean(arm, 'valid_accuracy'):.3f}  "
                  f"surviving var {result.mean(arm, 'surviving_variance'):.4f}  "
                  f"hot/median {result.mean(arm, 'hot_active'):.1f}/{result.mean(arm, 'median_active'):.1f}")


if __name__ == "__main__":
    main()
