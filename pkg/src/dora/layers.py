"""Adapted projections: the gated rank-1 component layer and the plain LoRA control.

Convention: activations are row vectors, so a projection computes ``x @ W``
with ``W`` of shape ``(d_in, d_out)``. A component's column ``a`` is
``(d_in, 1)`` and its row ``b`` is ``(1, d_out)``; its update is
``c * a @ b``, the same shape as ``W``.

Component parameters are stored stacked per layer (``A``: d_in x r,
``B``: r x d_out, ``c``: 1 x r) so the forward pass is three tape ops
regardless of r. :class:`LoraComponent` is a view onto one column/row/gate.
"""

from __future__ import annotations

import enum
import math
from typing import NamedTuple

import numpy as np

from . import numerics as nx
from .errors import DimensionError
from .numerics import Node


class MatrixKind(enum.Enum):
    QUERY = "query"
    KEY = "key"
    VALUE = "value"
    OUTPUT = "output"
    FFN1 = "ffn1"
    FFN2 = "ffn2"

    @property
    def code(self) -> int:
        return KIND_ORDER.index(self)

    @classmethod
    def parse(cls, text: str) -> "MatrixKind":
        return cls(text.strip().lower())


KIND_ORDER = list(MatrixKind)


class LayerId(NamedTuple):
    layer: int
    kind: MatrixKind

    def __str__(self) -> str:
        return f"{self.layer}:{self.kind.value}"

    @classmethod
    def parse(cls, text: str) -> "LayerId":
        layer, kind = text.split(":")
        return cls(int(layer), MatrixKind.parse(kind))


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, int], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LoraComponent:
    """View of component ``index`` of a :class:`DoraLinear`.

    Reads and writes go straight through to the layer's stacked arrays.
    """

    __slots__ = ("layer", "index")

    def __init__(self, layer: "DoraLinear", index: int):
        self.layer = layer
        self.index = index

    @property
    def a(self) -> np.ndarray:
        return self.layer.A.value[:, self.index:self.index + 1]

    @property
    def b(self) -> np.ndarray:
        return self.layer.B.value[self.index:self.index + 1, :]

    @property
    def c(self) -> float:
        return float(self.layer.c.value[0, self.index])

    @c.setter
    def c(self, value: float) -> None:
        self.layer.c.value[0, self.index] = value

    @property
    def active(self) -> bool:
        return bool(self.layer.active[self.index])

    @property
    def eligible(self) -> bool:
        return bool(self.layer.eligible[self.index])

    @property
    def smoothed_score(self) -> float:
        return float(self.layer.smoothed[self.index])

    def delta(self) -> np.ndarray:
        return self.c * (self.a @ self.b)

    def __repr__(self) -> str:
        return (f"LoraComponent({self.layer.layer_id}#{self.index}, c={self.c:.4g}, "
                f"active={self.active}, s~={self.smoothed_score:.4g})")


class DoraLinear:
    """Frozen ``w0`` plus ``rank`` gated rank-1 components.

    Per-component bookkeeping lives in parallel arrays: ``active`` (gate is
    live), ``eligible`` (kept by the last budget enforcement, possibly still
    inert at c == 0), ``smoothed`` (EMA importance) and ``scored`` (EMA has
    been initialised).
    """

    def __init__(self, w0: np.ndarray, rank: int, layer_id: LayerId,
                 rng: np.random.Generator | None = None):
        w0 = np.array(w0, dtype=nx.DTYPE)  # own copy: base dicts are shared across arms
        if w0.ndim != 2:
            raise DimensionError(f"w0 must be 2-D, got shape {w0.shape}")
        if rank < 0:
            raise ValueError("rank must be >= 0")
        rng = rng if rng is not None else np.random.default_rng(0)
        d_in, d_out = w0.shape
        self.layer_id = layer_id
        self.w0 = Node(w0, name=f"{layer_id}.w0")
        # fan_in of a 1-D factor is its length, as with a (1, n) weight
        self.A = Node(kaiming_uniform(rng, (d_in, rank), fan_in=d_in),
                      requires_grad=True, name=f"{layer_id}.A")
        self.B = Node(kaiming_uniform(rng, (rank, d_out), fan_in=d_out),
                      requires_grad=True, name=f"{layer_id}.B")
        self.c = Node(np.zeros((1, rank)), requires_grad=True, name=f"{layer_id}.c")
        self.active = np.ones(rank, dtype=bool)
        self.eligible = np.ones(rank, dtype=bool)
        self.smoothed = np.zeros(rank)
        self.scored = np.zeros(rank, dtype=bool)

    @property
    def d_in(self) -> int:
        return self.w0.shape[0]

    @property
    def d_out(self) -> int:
        return self.w0.shape[1]

    @property
    def rank(self) -> int:
        return self.c.shape[1]

    @property
    def components(self) -> list[LoraComponent]:
        return [LoraComponent(self, i) for i in range(self.rank)]

    def params(self) -> list[Node]:
        return [self.A, self.B, self.c]

    def delta_matrix(self) -> np.ndarray:
        """Dense total update sum_i c_i a_i b_i."""
        return (self.A.value * self.c.value) @ self.B.value

    def dense_weight(self) -> np.ndarray:
        return self.w0.value + self.delta_matrix()

    def __call__(self, x) -> Node:
        return dora_forward(self, x)

    def prune(self, indices) -> None:
        idx = np.asarray(indices, dtype=np.int64)
        self.c.value[0, idx] = 0.0
        self.active[idx] = False
        self.eligible[idx] = False

    def restore_check(self) -> np.ndarray:
        """Mark components whose gate moved off zero as active again."""
        revived = (self.c.value[0] != 0.0) & ~self.active
        self.active |= revived
        self.eligible |= revived
        return revived


def dora_forward(layer: DoraLinear, x) -> Node:
    """``x @ (w0 + sum_i c_i a_i b_i)`` evaluated as ``x@w0 + ((x@A) * c) @ B``."""
    x = nx.as_node(x)
    if x.shape[-1] != layer.d_in:
        raise DimensionError(f"{layer.layer_id}: input width {x.shape[-1]} != d_in {layer.d_in}")
    base = nx.matmul(x, layer.w0)
    if layer.rank == 0:
        return base
    h = nx.mul(nx.matmul(x, layer.A), layer.c)
    return nx.add(base, nx.matmul(h, layer.B))


def component_delta_norm(comp: LoraComponent) -> float:
    """Frobenius norm of ``c a b``; exact for rank 1 as |c| * |a| * |b|."""
    return abs(comp.c) * float(np.linalg.norm(comp.a)) * float(np.linalg.norm(comp.b))


def prune(comp: LoraComponent) -> None:
    comp.layer.prune([comp.index])


def restore_check(comp: LoraComponent) -> bool:
    layer, i = comp.layer, comp.index
    if layer.c.value[0, i] != 0.0 and not layer.active[i]:
        layer.active[i] = True
        layer.eligible[i] = True
    return bool(layer.active[i])


# ---------------------------------------------------------------------------
# uniform-rank control arm

def lora_forward(w0, A, B, x) -> Node:
    """``x @ (w0 + A @ B)`` computed as ``x@w0 + (x@A)@B``."""
    w0, A, B, x = (nx.as_node(v) for v in (w0, A, B, x))
    if A.shape[0] != w0.shape[0] or B.shape[1] != w0.shape[1] or A.shape[1] != B.shape[0]:
        raise DimensionError(f"lora_forward: w0 {w0.shape}, A {A.shape}, B {B.shape} do not conform")
    if x.shape[-1] != w0.shape[0]:
        raise DimensionError(f"lora_forward: input width {x.shape[-1]} != d_in {w0.shape[0]}")
    return nx.add(nx.matmul(x, w0), nx.matmul(nx.matmul(x, A), B))


class LoraLinear:
    """Plain LoRA site: A Kaiming-initialised, B zero."""

    def __init__(self, w0: np.ndarray, rank: int, layer_id: LayerId,
                 rng: np.random.Generator | None = None):
        w0 = np.array(w0, dtype=nx.DTYPE)  # own copy: base dicts are shared across arms
        rng = rng if rng is not None else np.random.default_rng(0)
        d_in, d_out = w0.shape
        self.layer_id = layer_id
        self.w0 = Node(w0, name=f"{layer_id}.w0")
        self.A = Node(kaiming_uniform(rng, (d_in, rank), fan_in=d_in),
                      requires_grad=True, name=f"{layer_id}.A")
        self.B = Node(np.zeros((rank, d_out)), requires_grad=True, name=f"{layer_id}.B")

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    def params(self) -> list[Node]:
        return [self.A, self.B]

    def delta_matrix(self) -> np.ndarray:
        return self.A.value @ self.B.value

    def __call__(self, x) -> Node:
        return lora_forward(self.w0, self.A, self.B, x)
