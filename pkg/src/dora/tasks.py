"""Synthetic desk-scale tasks.

* Teacher adaptation: the frozen base plus a planted low-rank update of known
  rank at every site labels random inputs; the student must recover it.
* Sequence classification: the class is the argmax of a planted linear
  functional of the mean token features.

Datasets round-trip through ``.npz`` files (arrays ``x_train``, ``y_train``,
``x_valid``, ``y_valid`` plus a JSON ``meta`` string).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError
from .layers import KIND_ORDER, LayerId
from .model import Encoder, TransformerConfig, encoder_forward, head_readout, with_deltas


@dataclass
class TeacherSpec:
    ranks: dict[LayerId, int]
    magnitude: float = 1.0
    seed: int = 0

    @classmethod
    def heterogeneous(cls, cfg: TransformerConfig, hot: LayerId, hot_rank: int = 6,
                      base_rank: int = 1, magnitude: float = 1.0, seed: int = 0) -> "TeacherSpec":
        ranks = {LayerId(l, k): base_rank for l in range(cfg.layers) for k in KIND_ORDER}
        ranks[hot] = hot_rank
        return cls(ranks, magnitude, seed)


@dataclass
class SyntheticDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_valid: np.ndarray
    y_valid: np.ndarray
    kind: str  # "regression" | "classification"
    n_classes: int = 0
    deltas: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.x_train) == 0:
            raise ConfigError("n_train", "dataset must not be empty")

    @property
    def n_train(self) -> int:
        return len(self.x_train)

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return self.x_train, self.y_train
        if which == "valid":
            return self.x_valid, self.y_valid
        raise ValueError(f"unknown split {which!r}")

    def save(self, path) -> None:
        meta = {"kind": self.kind, "n_classes": self.n_classes,
                "deltas": {str(k): v.tolist() for k, v in self.deltas.items()}}
        np.savez(path, x_train=self.x_train, y_train=self.y_train,
                 x_valid=self.x_valid, y_valid=self.y_valid, meta=json.dumps(meta))

    @classmethod
    def load(cls, path) -> "SyntheticDataset":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            deltas = {LayerId.parse(k): np.array(v) for k, v in meta["deltas"].items()}
            return cls(z["x_train"], z["y_train"], z["x_valid"], z["y_valid"],
                       meta["kind"], meta["n_classes"], deltas)


def planted_delta(rng: np.random.Generator, shape: tuple[int, int], rank: int,
                  magnitude: float) -> np.ndarray:
    """Rank-``rank`` matrix with orthonormal factors and all singular values = magnitude."""
    d_in, d_out = shape
    if rank > min(d_in, d_out):
        raise ConfigError("teacher_rank", f"rank {rank} exceeds site shape {shape}")
    if rank == 0:
        return np.zeros(shape)
    u, _ = np.linalg.qr(rng.normal(size=(d_in, rank)))
    v, _ = np.linalg.qr(rng.normal(size=(d_out, rank)))
    return magnitude * (u @ v.T)


def make_teacher_task(cfg: TransformerConfig, base: dict, spec: TeacherSpec,
                      n_train: int = 512, n_valid: int = 256) -> SyntheticDataset:
    rng = np.random.default_rng(spec.seed)
    deltas = {}
    for lid in sorted(spec.ranks, key=lambda l: (l.layer, l.kind.code)):
        r = spec.ranks[lid]
        if r < 0:
            raise ConfigError("teacher_rank", f"negative rank at {lid}")
        deltas[lid] = planted_delta(rng, cfg.site_shape(lid.kind), r, spec.magnitude)
    teacher = Encoder(cfg, with_deltas(base, deltas), adapter="none")
    shape = (cfg.seq_len, cfg.d_feat)
    x_train = rng.normal(size=(n_train,) + shape)
    x_valid = rng.normal(size=(n_valid,) + shape)
    y_train = encoder_forward(teacher, x_train).value
    y_valid = encoder_forward(teacher, x_valid).value
    return SyntheticDataset(x_train, y_train, x_valid, y_valid, "regression", deltas=deltas)


@dataclass
class ClassificationSpec:
    n_classes: int = 2
    difficulty: float = 0.0  # label-flip probability
    margin: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("n_classes", "classification needs >= 2 classes")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ConfigError("difficulty", "must lie in [0, 1]")


def make_classification_task(cfg: TransformerConfig, spec: ClassificationSpec,
                             n_train: int = 512, n_valid: int = 256, base: dict | None = None,
                             teacher: TeacherSpec | None = None) -> SyntheticDataset:
    """Labels are the argmax of a planted linear probe on pooled token features.

    Without ``base`` the features are the raw inputs averaged over positions.
    With ``base`` (and optionally ``teacher`` perturbations) they are the
    mean-pooled outputs of that encoder, so the frozen model already carries
    most of the signal and adaptation has to recover the planted update.
    Scores are standardised before the ``margin`` filter; ``difficulty`` is
    the probability of flipping a label to a uniformly chosen other class.
    """
    rng = np.random.default_rng(spec.seed)
    deltas = {}
    if base is not None and teacher is not None:
        for lid in sorted(teacher.ranks, key=lambda l: (l.layer, l.kind.code)):
            deltas[lid] = planted_delta(rng, cfg.site_shape(lid.kind), teacher.ranks[lid], teacher.magnitude)
    if base is None:
        width = cfg.d_feat
        features = lambda x: x.mean(axis=1)
    else:
        width = cfg.d
        encoder = Encoder(cfg, with_deltas(base, deltas) if deltas else base, adapter="none")
        features = lambda x: encoder_forward(encoder, x).value.mean(axis=1)
    probe = rng.normal(size=(width, spec.n_classes))
    pilot = features(rng.normal(size=(256, cfg.seq_len, cfg.d_feat))) @ probe
    offset, spread = pilot.mean(axis=0), pilot.std()

    def draw(count: int) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        while sum(len(x) for x in xs) < count:
            x = rng.normal(size=(count, cfg.seq_len, cfg.d_feat))
            score = (features(x) @ probe - offset) / spread
            top2 = np.sort(score, axis=1)[:, -2:]
            keep = (top2[:, 1] - top2[:, 0]) >= spec.margin
            xs.append(x[keep])
            ys.append(score[keep].argmax(axis=1))
        x, y = np.concatenate(xs)[:count], np.concatenate(ys)[:count]
        flip = rng.random(count) < spec.difficulty
        shift = rng.integers(1, spec.n_classes, size=count)
        y = np.where(flip, (y + shift) % spec.n_classes, y)
        return x, y

    x_train, y_train = draw(n_train)
    x_valid, y_valid = draw(n_valid)
    return SyntheticDataset(x_train, y_train, x_valid, y_valid, "classification", spec.n_classes,
                            deltas=deltas)


def batch_loss(model: Encoder, dataset: SyntheticDataset, x, y) -> nx.Node:
    if dataset.kind == "classification":
        return nx.cross_entropy(head_readout(model, x), y)
    return nx.mean_sq_error(encoder_forward(model, x), y)


def evaluate(model: Encoder, dataset: SyntheticDataset, split: str = "valid") -> dict:
    """Loss (and accuracy for classification) on one split; no gradients kept."""
    x, y = dataset.split(split)
    if dataset.kind == "classification":
        logits = head_readout(model, x)
        loss = nx.cross_entropy(nx.Node(logits.value), y)
        acc = float(np.mean(logits.value.argmax(axis=1) == y))
        return {"loss": float(loss.value[0, 0]), "accuracy": acc}
    out = encoder_forward(model, x)
    return {"loss": float(np.mean((out.value - y) ** 2))}
