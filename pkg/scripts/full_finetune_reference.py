#!/usr/bin/env python3
"""Full fine-tuning reference on the classification task: trains every host
weight for a fixed number of steps and reports validation accuracy."""

import argparse

from dora.config import RunConfig
from dora.model import Encoder
from dora.tasks import evaluate
from dora.train import build_task, full_finetune


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    for seed in range(args.seeds):
        cfg = RunConfig().replace(task="classification", seed=seed)
        base, ds = build_task(cfg)
        model = Encoder(cfg.model, base, adapter="none")
        before = evaluate(model, ds)["accuracy"]
        losses = full_finetune(model, ds, args.steps, lr=args.lr, seed=seed)
        after = evaluate(model, ds)
        print(f"seed {seed}: initial acc {before:.3f} -> {after['accuracy']:.3f} "
              f"(valid loss {after['loss']:.4f}, last train loss {losses[-1]:.4f})")


if __name__ == "__main__":
    main()
