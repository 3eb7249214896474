"""Dense float64 arrays with a tape-based reverse-mode autodiff.

A :class:`Node` wraps a numpy array (2-D, or 2-D with leading batch axes)
and, when it is the result of an op, a closure that pushes the upstream
gradient into its parents. ``backward(loss)`` walks the tape once in reverse
topological order.

Broadcasting is limited to what the host model needs: batch axes in
``matmul`` and row/scalar broadcasting in ``add``/``mul``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DTYPE = np.float64


class Node:
    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 parents: tuple["Node", ...] = (), backward: Callable | None = None):
        value = np.asarray(value, dtype=DTYPE)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        self.value = value
        self.requires_grad = requires_grad
        self.parents = parents
        self._backward = backward
        self.name = name
        self.grad = np.zeros_like(value) if requires_grad and not parents else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar, used sparingly in the model code
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _make(value: np.ndarray, parents: Sequence[Node], backward: Callable) -> Node:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Node(value)
    return Node(value, requires_grad=True, parents=tuple(parents), backward=backward)


def _accumulate(node: Node, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        node.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Node, b: Node) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# ops

def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out_value = np.matmul(a.value, b.value)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape))

    return _make(out_value, (a, b), backward)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast("add", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), backward)


def sub(a, b) -> Node:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Node:
    """Elementwise product with broadcasting."""
    a, b = as_node(a), as_node(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), backward)


def scale(a, k: float) -> Node:
    a = as_node(a)
    k = float(k)
    return _make(a.value * k, (a,), lambda g: _accumulate(a, g * k))


def transpose(a) -> Node:
    """Swap the last two axes."""
    a = as_node(a)
    return _make(np.swapaxes(a.value, -1, -2), (a,),
                 lambda g: _accumulate(a, np.swapaxes(g, -1, -2)))


def reshape(a, shape: tuple[int, ...]) -> Node:
    a = as_node(a)
    old = a.shape
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from None
    return _make(value, (a,), lambda g: _accumulate(a, g.reshape(old)))


def permute(a, axes: tuple[int, ...]) -> Node:
    a = as_node(a)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.value, axes), (a,),
                 lambda g: _accumulate(a, np.transpose(g, inverse)))


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: _accumulate(a, g * mask))


def softmax_rows(a) -> Node:
    """Softmax along the last axis, max-subtracted."""
    a = as_node(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accumulate(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (a,), backward)


def sum_all(a) -> Node:
    a = as_node(a)
    shape = a.shape
    return _make(a.value.sum().reshape(1, 1), (a,),
                 lambda g: _accumulate(a, np.broadcast_to(g.reshape(()), shape)))


def mean(a, axis: int | None = None) -> Node:
    """Mean over all entries (1x1 result) or along one axis (kept as size 1)."""
    a = as_node(a)
    shape = a.shape
    if axis is None:
        count = a.value.size
        return _make(a.value.mean().reshape(1, 1), (a,),
                     lambda g: _accumulate(a, np.broadcast_to(g.reshape(()) / count, shape)))
    count = shape[axis]
    value = a.value.mean(axis=axis, keepdims=True)
    return _make(value, (a,), lambda g: _accumulate(a, np.broadcast_to(g / count, shape)))


def variance(a, axis: int | None = None) -> Node:
    """Population variance (divide by the element count).

    With ``axis=None`` the result is 1x1 over all entries; with an axis the
    reduced axis is kept with size 1 (e.g. per-column variance of a stack of
    column vectors).
    """
    a = as_node(a)
    n = a.value.size if axis is None else a.shape[axis]
    mu = a.value.mean(axis=axis, keepdims=True)
    centered = a.value - mu
    value = (centered ** 2).mean(axis=axis, keepdims=True)
    if axis is None:
        value = value.reshape(1, 1)

    def backward(g):
        gg = g.reshape(()) if axis is None else g
        _accumulate(a, gg * (2.0 / n) * centered)

    return _make(value, (a,), backward)


def mean_sq_error(pred, target) -> Node:
    pred, target = as_node(pred), as_node(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mean_sq_error: prediction {pred.shape} vs target {target.shape}")
    diff = pred.value - target.value
    n = diff.size

    def backward(g):
        gd = g.reshape(()) * (2.0 / n) * diff
        _accumulate(pred, gd)
        _accumulate(target, -gd)

    return _make(np.array([[np.mean(diff ** 2)]]), (pred, target), backward)


def cross_entropy(logits, labels) -> Node:
    """Mean softmax cross-entropy of ``logits`` (batch x classes) against integer labels."""
    logits = as_node(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.value.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise DimensionError("cross_entropy: label out of range")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    rows = np.arange(labels.size)
    loss = -log_p[rows, labels].mean()

    def backward(g):
        p = np.exp(log_p)
        p[rows, labels] -= 1.0
        _accumulate(logits, g.reshape(()) * p / labels.size)

    return _make(np.array([[loss]]), (logits,), backward)


def frobenius(m) -> float:
    v = m.value if isinstance(m, Node) else np.asarray(m, dtype=DTYPE)
    peak = float(np.max(np.abs(v))) if v.size else 0.0
    if peak == 0.0 or not np.isfinite(peak):
        return peak
    # rescale first so tiny or huge entries do not under/overflow when squared
    u = v / peak
    return peak * float(np.sqrt(np.sum(u * u)))


# ---------------------------------------------------------------------------
# tape traversal

def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into every reachable leaf with requires_grad.

    Interior gradients are reset on each call; leaf gradients accumulate
    until zeroed by the caller.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    for node in order:
        if not node.is_leaf:
            node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.zero_grad()
