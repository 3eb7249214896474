"""Variance penalty on component factors and its combination with the task loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError
from .layers import DoraLinear
from .numerics import Node


@dataclass(frozen=True)
class RegularizerConfig:
    eta: float = 0.3

    def __post_init__(self):
        if not self.eta >= 0:
            raise ConfigError("eta", f"regularization coefficient must be >= 0, got {self.eta}")


def dem_loss(layers: list[DoraLinear]) -> Node:
    """Mean over every component (pruned included) of Var(a_i) + Var(b_i)."""
    n = sum(layer.rank for layer in layers)
    if n == 0:
        raise ContractError("dem_loss needs at least one component")
    terms = []
    for layer in layers:
        if layer.rank == 0:
            continue
        # per-column variance of A, per-row variance of B: one value per component
        terms.append(nx.sum_all(nx.variance(layer.A, axis=0)))
        terms.append(nx.sum_all(nx.variance(layer.B, axis=1)))
    total = terms[0]
    for t in terms[1:]:
        total = nx.add(total, t)
    return nx.scale(total, 1.0 / n)


def combined_loss(task_loss: Node, layers: list[DoraLinear], eta: float) -> tuple[Node, Node | None]:
    """Return ``(task + eta * R, R)``; with ``eta == 0`` the task node is returned as-is."""
    if task_loss.value.size != 1:
        raise ContractError(f"task loss must be scalar, got shape {task_loss.shape}")
    if eta == 0:
        return task_loss, None
    reg = dem_loss(layers)
    return nx.add(task_loss, nx.scale(reg, eta)), reg


def surviving_variance(layers: list[DoraLinear]) -> float:
    """Mean of Var(a_i) + Var(b_i) over active components (nan if none survive)."""
    vals = [float(np.var(layer.A.value[:, i]) + np.var(layer.B.value[i]))
            for layer in layers for i in np.flatnonzero(layer.active)]
    return float(np.mean(vals)) if vals else float("nan")
