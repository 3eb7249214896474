"""Paired multi-seed ablation suites.

Every arm of a suite sees the same base weights and dataset for a given
seed, so differences between arms come from the adaptation method alone.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .dem import surviving_variance
from .errors import ConfigError
from .train import build_task, fit

DEFAULT_ETA = 0.3
INITIAL_BUDGETS = (2.0, 3.0, 4.0, 6.0, 8.0)


def suite_arms(suite: str, cfg: RunConfig) -> list[tuple[str, dict]]:
    """``(arm name, flat overrides)`` for each arm of ``suite``."""
    train = cfg.train
    if suite == "dem":
        eta = train.eta if train.eta > 0 else DEFAULT_ETA
        return [(f"eta={eta:g}", {"eta": eta, "adapter": "dora"}), ("eta=0", {"eta": 0.0, "adapter": "dora"})]
    if suite == "initial-budget":
        return [(f"b0={b:g}", {"b0": b, "bT": 2.0, "adapter": "dora"}) for b in INITIAL_BUDGETS]
    if suite == "uniform-vs-adaptive":
        return [("dora", {"adapter": "dora"}),
                ("lora", {"adapter": "lora", "lora_rank": int(round(train.bT))})]
    raise ConfigError("suite", f"unknown suite {suite!r}; expected dem, initial-budget or uniform-vs-adaptive")


SUITES = ("dem", "initial-budget", "uniform-vs-adaptive")


@dataclass
class ArmResult:
    arm: str
    seed: int
    valid_loss: float
    valid_accuracy: float
    surviving_variance: float
    active: int
    hot_active: int
    median_active: float


def run_seed(suite: str, cfg: RunConfig, seed: int) -> list[ArmResult]:
    cfg = cfg.replace(seed=seed)
    base, dataset = build_task(cfg)
    hot = cfg.task.hot_site
    results = []
    for name, overrides in suite_arms(suite, cfg):
        run = fit(cfg.replace(**overrides), dataset, base)
        layers = run.model.dora_layers() if run.state.layers else []
        if layers:
            counts = {str(l.layer_id): int(l.active.sum()) for l in layers}
            active = sum(counts.values())
            hot_active = counts.get(hot, 0)
            median = float(np.median(list(counts.values())))
        else:
            active = sum(site.rank for site in run.model.sites)
            hot_active, median = run.model.sites[0].rank, float(run.model.sites[0].rank)
        results.append(ArmResult(name, seed, run.metrics["loss"], run.metrics.get("accuracy", math.nan),
                                 surviving_variance(layers) if layers else math.nan,
                                 active, hot_active, median))
    return results


@dataclass
class SuiteResult:
    suite: str
    arms: list[str]
    rows: list[ArmResult]

    def for_arm(self, arm: str) -> list[ArmResult]:
        return [r for r in self.rows if r.arm == arm]

    def mean(self, arm: str, metric: str) -> float:
        return float(np.mean([getattr(r, metric) for r in self.for_arm(arm)]))

    def to_csv(self) -> str:
        cols = ("valid_loss", "valid_accuracy", "surviving_variance", "active", "hot_active", "median_active")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("arm", "seed") + cols)
        for r in self.rows:
            w.writerow((r.arm, r.seed) + tuple(_fmt(getattr(r, c)) for c in cols))
        for arm in self.arms:
            w.writerow((arm, "mean") + tuple(_fmt(self.mean(arm, c)) for c in cols))
        return buf.getvalue()


def _fmt(v) -> str:
    return repr(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def run_suite(suite: str, cfg: RunConfig, seeds: list[int] | None = None, workers: int = 1) -> SuiteResult:
    """Run every arm of ``suite`` for each seed (default: cfg seed + 0..4)."""
    arms = [name for name, _ in suite_arms(suite, cfg)]
    if seeds is None:
        seeds = [cfg.train.seed + k for k in range(5)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            per_seed = list(pool.map(run_seed, [suite] * len(seeds), [cfg] * len(seeds), seeds))
    else:
        per_seed = [run_seed(suite, cfg, s) for s in seeds]
    rows = [r for arm in arms for rs in per_seed for r in rs if r.arm == arm]
    return SuiteResult(suite, arms, rows)
