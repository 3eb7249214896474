"""Global budget enforcement across layers and allocation reports."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .layers import KIND_ORDER, DoraLinear, LayerId, MatrixKind


@dataclass
class PruneDecision:
    step: int
    cap: int
    kept: list[tuple[LayerId, int]] = field(default_factory=list)
    pruned: list[tuple[LayerId, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "cap": self.cap,
            "kept": [f"{lid}#{i}" for lid, i in self.kept],
            "pruned": [f"{lid}#{i}" for lid, i in self.pruned],
        }


def ranking(layers: list[DoraLinear]) -> list[tuple[int, int]]:
    """All (layer position, component index) pairs, most important first.

    Order: smoothed score desc, then |c| desc, then layer position, then index.
    """
    s = np.concatenate([l.smoothed for l in layers]) if layers else np.zeros(0)
    c = np.concatenate([np.abs(l.c.value[0]) for l in layers]) if layers else np.zeros(0)
    pos = np.concatenate([np.full(l.rank, k) for k, l in enumerate(layers)]) if layers else np.zeros(0)
    idx = np.concatenate([np.arange(l.rank) for l in layers]) if layers else np.zeros(0)
    # lexsort: last key is primary
    order = np.lexsort((idx, pos, -c, -s))
    return [(int(pos[o]), int(idx[o])) for o in order]


def enforce_budget(layers: list[DoraLinear], cap: int, step: int = 0) -> PruneDecision:
    """Keep the ``cap`` highest-ranked components globally; gate the rest to zero.

    Kept components that were pruned earlier and still have c == 0 become
    eligible but stay inactive until a gradient step moves their gate.
    """
    if cap < 0:
        raise ValueError("cap must be >= 0")
    decision = PruneDecision(step=step, cap=cap)
    order = ranking(layers)
    prune_idx: list[list[int]] = [[] for _ in layers]
    for rank_pos, (k, i) in enumerate(order):
        lid = layers[k].layer_id
        if rank_pos < cap:
            layers[k].eligible[i] = True
            decision.kept.append((lid, i))
        else:
            prune_idx[k].append(i)
            decision.pruned.append((lid, i))
    for layer, idx in zip(layers, prune_idx):
        if idx:
            layer.prune(idx)
    return decision


@dataclass
class AllocationReport:
    step: int
    num_layers: int
    active: dict[tuple[int, MatrixKind], int]
    eligible: dict[tuple[int, MatrixKind], int]

    @property
    def total_active(self) -> int:
        return sum(self.active.values())

    @property
    def total_eligible(self) -> int:
        return sum(self.eligible.values())

    def grid(self, which: str = "active") -> np.ndarray:
        """layers x six kinds array of counts."""
        table = getattr(self, which)
        out = np.zeros((self.num_layers, len(KIND_ORDER)), dtype=int)
        for (layer, kind), n in table.items():
            out[layer, kind.code] = n
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("layer,kind,active,eligible\n")
        for layer in range(self.num_layers):
            for kind in KIND_ORDER:
                key = (layer, kind)
                buf.write(f"{layer},{kind.value},{self.active.get(key, 0)},{self.eligible.get(key, 0)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, step: int = 0) -> "AllocationReport":
        lines = [ln for ln in text.strip().splitlines() if ln]
        if lines[0].strip() != "layer,kind,active,eligible":
            raise ValueError(f"unexpected allocation header {lines[0]!r}")
        active, eligible = {}, {}
        for ln in lines[1:]:
            layer, kind, a, e = ln.split(",")
            key = (int(layer), MatrixKind.parse(kind))
            active[key], eligible[key] = int(a), int(e)
        num_layers = 1 + max(k[0] for k in active) if active else 0
        return cls(step, num_layers, active, eligible)

    def to_svg(self, cell: int = 36) -> str:
        """Heatmap, layers as rows and matrix kinds as columns, darker = more active."""
        grid = self.grid("active")
        peak = max(int(grid.max()), 1)
        left, top = 60, 30
        width = left + cell * len(KIND_ORDER) + 10
        height = top + cell * self.num_layers + 10
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
                 f'font-family="monospace" font-size="11">']
        for j, kind in enumerate(KIND_ORDER):
            parts.append(f'<text x="{left + j * cell + cell // 2}" y="{top - 8}" '
                         f'text-anchor="middle">{kind.value}</text>')
        for i in range(self.num_layers):
            y = top + i * cell
            parts.append(f'<text x="{left - 8}" y="{y + cell // 2 + 4}" text-anchor="end">L{i}</text>')
            for j in range(len(KIND_ORDER)):
                n = int(grid[i, j])
                shade = int(round(255 * (1 - n / peak)))
                ink = "#fff" if n > peak / 2 else "#000"
                x = left + j * cell
                parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                             f'fill="rgb({shade},{shade},255)" stroke="#888"/>')
                parts.append(f'<text x="{x + cell // 2}" y="{y + cell // 2 + 4}" '
                             f'text-anchor="middle" fill="{ink}">{n}</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"


def allocation_report(layers: list[DoraLinear], step: int) -> AllocationReport:
    active: dict[tuple[int, MatrixKind], int] = {}
    eligible: dict[tuple[int, MatrixKind], int] = {}
    for layer in layers:
        key = (layer.layer_id.layer, layer.layer_id.kind)
        active[key] = active.get(key, 0) + int(layer.active.sum())
        eligible[key] = eligible.get(key, 0) + int(layer.eligible.sum())
    num_layers = 1 + max((k[0] for k in active), default=-1)
    return AllocationReport(step, num_layers, active, eligible)
