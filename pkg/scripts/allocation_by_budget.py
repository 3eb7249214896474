#!/usr/bin/env python3
"""Where does the final budget go? Trains the teacher task at several final
budgets and writes one allocation CSV and SVG heatmap per budget.

    python scripts/allocation_by_budget.py --budgets 1 2 3 4 --out runs/alloc
"""

import argparse
from pathlib import Path

import numpy as np

from dora.config import RunConfig, load_config
from dora.train import fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="base config (defaults apply otherwise)")
    ap.add_argument("--budgets", type=float, nargs="+", default=[1.0, 2.0, 3.0, 4.0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/alloc")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hot = cfg.task.hot_site
    for bT in args.budgets:
        run = fit(cfg.replace(bT=bT, b0=None, seed=args.seed))
        report = run.log.final_report
        tag = f"bT{bT:g}"
        (out / f"allocation_{tag}.csv").write_text(report.to_csv())
        (out / f"allocation_{tag}.svg").write_text(report.to_svg())
        grid = report.grid("active")
        print(f"bT={bT:g}  valid_loss={run.metrics['loss']:.5f}  hot site {hot}: "
              f"{report.active[_key(hot)]} active, median {np.median(grid):g}")
        for layer, row in enumerate(grid):
            print(f"    layer {layer}: " + " ".join(f"{int(v):2d}" for v in row))


def _key(site: str):
    from dora.layers import LayerId
    lid = LayerId.parse(site)
    return (lid.layer, lid.kind)


if __name__ == "__main__":
    main()
