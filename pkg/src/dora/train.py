"""The adaptation loop.

Per step: sample a batch, task loss, variance penalty, combined loss,
backward, optimizer update, importance scores and their EMA, budget, and
(on prune steps) global budget enforcement. Pruning starts at the first
multiple of ``prune_interval`` at or after ``t_i``; on the first step past
``T - t_f`` the budget is enforced one last time at ``bT`` and the
surviving set is frozen for the rest of the run.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .allocator import AllocationReport, PruneDecision, allocation_report, enforce_budget
from .config import RunConfig, TrainConfig
from .dem import combined_loss, dem_loss
from .errors import NumericalError
from .layers import LayerId
from .model import Encoder, init_base
from .optim import make_optimizer
from .schedule import BudgetSchedule, allowed_total
from .scoring import score_all
from .tasks import (ClassificationSpec, SyntheticDataset, TeacherSpec, batch_loss, evaluate,
                    make_classification_task, make_teacher_task)

log = logging.getLogger(__name__)


@dataclass
class StepRecord:
    step: int
    l_true: float
    l_reg: float
    l_combined: float
    active: int
    cap: int


@dataclass
class RunLog:
    records: list[StepRecord] = field(default_factory=list)
    decisions: list[PruneDecision] = field(default_factory=list)
    final_report: AllocationReport | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)


def derive_seeds(seed: int) -> dict[str, np.random.Generator]:
    names = ("base", "task", "adapter", "batch")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


def build_base(cfg: RunConfig) -> dict:
    """Frozen base weights (and task head init) for ``cfg.train.seed``."""
    n_classes = cfg.task.n_classes if cfg.task.task == "classification" else 0
    return init_base(cfg.model, derive_seeds(cfg.train.seed)["base"], n_classes)


def build_task(cfg: RunConfig) -> tuple[dict, SyntheticDataset]:
    """Frozen base weights and dataset, both determined by ``cfg.train.seed``."""
    rngs = derive_seeds(cfg.train.seed)
    task = cfg.task
    base = build_base(cfg)
    task_seed = int(rngs["task"].integers(2**31))
    teacher = TeacherSpec.heterogeneous(cfg.model, LayerId.parse(task.hot_site), task.hot_rank,
                                        task.base_rank, task.teacher_magnitude, task_seed)
    if task.task == "teacher":
        dataset = make_teacher_task(cfg.model, base, teacher, task.n_train, task.n_valid)
    else:
        spec = ClassificationSpec(task.n_classes, task.difficulty, task.margin, task_seed)
        dataset = make_classification_task(cfg.model, spec, task.n_train, task.n_valid, base, teacher)
    return base, dataset


def build_model(cfg: RunConfig, base: dict) -> Encoder:
    rng = derive_seeds(cfg.train.seed)["adapter"]
    train = cfg.train
    if train.adapter == "lora":
        return Encoder(cfg.model, base, adapter="lora", rank=train.uniform_rank, rng=rng)
    return Encoder(cfg.model, base, adapter="dora", rank=train.components_per_site, rng=rng)


class TrainState:
    def __init__(self, cfg: RunConfig, model: Encoder, dataset: SyntheticDataset):
        self.cfg = cfg
        self.model = model
        self.dataset = dataset
        self.train: TrainConfig = cfg.train
        self.schedule: BudgetSchedule = cfg.train.schedule()
        self.layers = model.dora_layers() if cfg.train.adapter == "dora" else []
        self.optimizer = make_optimizer(self.train.optimizer, model.trainable_params(), self.train.gamma)
        self.batch_rng = derive_seeds(self.train.seed)["batch"]
        self.frozen = False
        self.step = 0
        self.log = RunLog()

    @property
    def num_sites(self) -> int:
        return len(self.model.sites)

    def sample_batch(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.dataset.n_train
        size = min(self.train.batch_size, n)
        idx = self.batch_rng.choice(n, size=size, replace=False)
        return self.dataset.x_train[idx], self.dataset.y_train[idx]

    def is_prune_step(self, t: int) -> bool:
        sched = self.schedule
        return t >= sched.t_i and t % self.train.prune_interval == 0 and t <= sched.decay_end

    def is_freeze_step(self, t: int) -> bool:
        return not self.frozen and t > self.schedule.decay_end


def _first_nonfinite(model: Encoder) -> str:
    for site in model.sites:
        for p in site.params():
            if not np.all(np.isfinite(p.value)) or (p.grad is not None and not np.all(np.isfinite(p.grad))):
                return str(site.layer_id)
    for p in model.head_params():
        if not np.all(np.isfinite(p.value)):
            return "task head"
    return "loss"


def train_step(state: TrainState, batch) -> StepRecord:
    state.step += 1
    t = state.step
    cfg = state.train
    model = state.model
    x, y = batch

    l_true = batch_loss(model, state.dataset, x, y)
    if state.layers:
        l_comb, reg = combined_loss(l_true, state.layers, cfg.eta)
        l_reg = float((reg if reg is not None else dem_loss(state.layers)).value[0, 0])
    else:
        l_comb, l_reg = l_true, 0.0
    lt, lc = float(l_true.value[0, 0]), float(l_comb.value[0, 0])
    if not (np.isfinite(lt) and np.isfinite(lc)):
        raise NumericalError(t, _first_nonfinite(model))
    nx.backward(l_comb)
    state.optimizer.step()

    if state.layers:
        cap = _adapt(state, t)
        active = sum(int(layer.active.sum()) for layer in state.layers)
    else:
        active = cap = sum(site.rank for site in model.sites)
    state.optimizer.zero_grad()
    record = StepRecord(t, lt, l_reg, lc, active, cap)
    state.log.records.append(record)
    return record


def _adapt(state: TrainState, t: int) -> int:
    """Post-update bookkeeping: restore, score, budget, prune. Returns the cap at ``t``."""
    layers = state.layers
    if state.frozen:
        for layer in layers:
            layer.c.value[0, ~layer.eligible] = 0.0
    for layer in layers:
        layer.restore_check()
    score_all(layers, state.train.beta, t)
    cap = allowed_total(state.schedule, t, len(layers))
    freeze = state.is_freeze_step(t)
    if freeze or state.is_prune_step(t):
        decision = enforce_budget(layers, cap, t)
        state.log.decisions.append(decision)
        for layer in layers:
            state.optimizer.reset_state(layer.c, ~layer.eligible[None, :])
        if freeze:
            for layer in layers:
                layer.active |= layer.eligible
            state.frozen = True
        log.debug("step %d: cap %d, pruned %d", t, cap, len(decision.pruned))
    return cap


@dataclass
class FitResult:
    model: Encoder
    log: RunLog
    metrics: dict
    state: TrainState


def fit(cfg: RunConfig, dataset: SyntheticDataset | None = None, base: dict | None = None,
        model: Encoder | None = None) -> FitResult:
    """Run ``cfg.train.T`` steps and evaluate on the validation split."""
    if dataset is None or base is None:
        base, dataset = build_task(cfg)
    if model is None:
        model = build_model(cfg, base)
    state = TrainState(cfg, model, dataset)
    for _ in range(cfg.train.T):
        train_step(state, state.sample_batch())
    if state.layers:
        state.log.final_report = allocation_report(state.layers, state.step)
    metrics = evaluate(model, dataset, "valid")
    return FitResult(model, state.log, metrics, state)


def full_finetune(model: Encoder, dataset: SyntheticDataset, steps: int, lr: float = 1e-3,
                  batch_size: int = 32, seed: int = 0) -> list[float]:
    """Train every host weight (and the head) directly; adapters stay at init.

    Used as the full fine-tuning reference and as an optional pretraining
    phase that produces a non-trivial frozen base.
    """
    params = model.base_params() + model.head_params()
    for p in params:
        p.requires_grad = True
        p.zero_grad()
    opt = make_optimizer("adam", params, lr)
    rng = np.random.default_rng(seed)
    losses = []
    try:
        for _ in range(steps):
            idx = rng.choice(dataset.n_train, size=min(batch_size, dataset.n_train), replace=False)
            loss = batch_loss(model, dataset, dataset.x_train[idx], dataset.y_train[idx])
            nx.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(float(loss.value[0, 0]))
    finally:
        for p in model.base_params():
            p.requires_grad = False
            p.grad = None
    return losses
