"""Component importance: share of a layer's total update norm, plus its EMA."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .layers import DoraLinear, LoraComponent


@dataclass
class ImportanceSnapshot:
    step: int
    scores: list[np.ndarray] = field(default_factory=list)


def component_norms(layer: DoraLinear) -> np.ndarray:
    """|c_i| * |a_i| * |b_i| for every component of the layer."""
    return (np.abs(layer.c.value[0])
            * np.linalg.norm(layer.A.value, axis=0)
            * np.linalg.norm(layer.B.value, axis=1))


def raw_scores(layer: DoraLinear) -> np.ndarray:
    """s_i = |dW_i|_F / |sum_j dW_j|_F over all components of ``layer``.

    Numerators are taken from the materialised rank-1 matrices, like the
    denominator, so a lone live component scores exactly 1. A layer whose
    total update is exactly zero scores 0 everywhere.
    """
    total = float(np.linalg.norm(layer.delta_matrix()))
    if total == 0.0:
        return np.zeros(layer.rank)
    scaled = layer.A.value * layer.c.value
    per = [np.linalg.norm(np.outer(scaled[:, i], layer.B.value[i])) for i in range(layer.rank)]
    return np.array(per) / total


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta < 1.0:
        raise ConfigError("beta", f"smoothing factor must lie in [0, 1), got {beta}")


def update_layer(layer: DoraLinear, scores: np.ndarray, beta: float) -> np.ndarray:
    """Fold ``scores`` into the layer's smoothed scores; first event seeds the EMA."""
    _check_beta(beta)
    scores = np.asarray(scores, dtype=float)
    ema = beta * layer.smoothed + (1.0 - beta) * scores
    layer.smoothed = np.where(layer.scored, ema, scores)
    layer.scored[:] = True
    return layer.smoothed


def update_smoothed(comp: LoraComponent, s: float, beta: float, t: int | None = None) -> float:
    _check_beta(beta)
    layer, i = comp.layer, comp.index
    if layer.scored[i]:
        layer.smoothed[i] = beta * layer.smoothed[i] + (1.0 - beta) * s
    else:
        layer.smoothed[i] = s
        layer.scored[i] = True
    return float(layer.smoothed[i])


def score_all(layers: list[DoraLinear], beta: float, step: int) -> ImportanceSnapshot:
    snap = ImportanceSnapshot(step)
    for layer in layers:
        s = raw_scores(layer)
        update_layer(layer, s, beta)
        snap.scores.append(s)
    return snap
