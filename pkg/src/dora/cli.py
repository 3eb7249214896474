"""Command-line front end.

    python -m dora train <config> [--seed N] [--out DIR]
    python -m dora ablate <suite> <config> [--seed N] [--out DIR] [--seeds K] [--workers W]
    python -m dora report <checkpoint> [--svg out.svg] [--out DIR]

Exit codes: 0 ok, 2 config error, 3 I/O or corrupt checkpoint, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import subprocess
import sys
from pathlib import Path

from . import __version__
from .ablation import SUITES, run_suite
from .allocator import AllocationReport, allocation_report
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, serialize_config, to_flat
from .errors import CheckpointError, ConfigError, DoraError
from .train import fit

log = logging.getLogger("dora")


def version_stamp() -> str:
    """Package version plus the git revision of the source tree when available."""
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def manifest_id(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


def write_manifest(out: Path, cfg: RunConfig, files: list[str]) -> dict:
    manifest = {
        "manifest_id": manifest_id(cfg),
        "config": to_flat(cfg),
        "seed": cfg.train.seed,
        "version": version_stamp(),
        "outputs": {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _load(path: str, seed: int | None) -> RunConfig:
    try:
        cfg = load_config(path)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return cfg if seed is None else cfg.replace(seed=seed)


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CheckpointError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def cmd_train(args) -> int:
    cfg = _load(args.config, args.seed)
    out = _outdir(args.out)
    run = fit(cfg)
    files = ["runlog.jsonl", "checkpoint.dora"]
    (out / "runlog.jsonl").write_text(run.log.to_jsonl())
    if run.log.final_report is not None:
        (out / "allocation.csv").write_text(run.log.final_report.to_csv())
        files.insert(1, "allocation.csv")
    save_checkpoint(out / "checkpoint.dora", run.model, cfg, run.state.step, manifest_id(cfg))
    write_manifest(out, cfg, files)
    metrics = " ".join(f"{k}={v:.6g}" for k, v in run.metrics.items())
    print(f"trained {cfg.train.T} steps: {metrics}; outputs in {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args.config, args.seed)
    out = _outdir(args.out)
    seeds = [cfg.train.seed + k for k in range(args.seeds)]
    result = run_suite(args.suite, cfg, seeds, args.workers)
    name = f"ablation_{args.suite}.csv"
    (out / name).write_text(result.to_csv())
    write_manifest(out, cfg, [name])
    for arm in result.arms:
        print(f"{arm:>10}  valid_loss={result.mean(arm, 'valid_loss'):.6g}  "
              f"surviving_var={result.mean(arm, 'surviving_variance'):.4g}")
    return 0


def cmd_report(args) -> int:
    _, model, header = load_checkpoint(args.checkpoint)
    layers = model.dora_layers()
    if layers and len(layers) == len(model.sites):
        report = allocation_report(layers, header.get("step", 0))
    else:
        # plain LoRA checkpoint: every component counts as active
        counts = {(s.layer_id.layer, s.layer_id.kind): s.rank for s in model.sites}
        report = AllocationReport(header.get("step", 0), len(model.blocks), counts, dict(counts))
    out = _outdir(args.out)
    (out / "allocation.csv").write_text(report.to_csv())
    if args.svg:
        Path(args.svg).write_text(report.to_svg())
    print(f"{report.total_active} active components across {report.num_layers} layers")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dora", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one adaptation")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="run a paired multi-seed suite")
    a.add_argument("suite", choices=SUITES)
    a.add_argument("config")
    a.add_argument("--seeds", type=int, default=5, help="number of seeds (default 5)")
    a.add_argument("--workers", type=int, default=1, help="parallel processes, one per seed")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="allocation table from a checkpoint")
    r.add_argument("checkpoint")
    r.add_argument("--svg", help="also write a heatmap to this path")
    r.set_defaults(func=cmd_report)

    for s in (t, a, r):
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--out", default=".", help="output directory (default: .)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DoraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
