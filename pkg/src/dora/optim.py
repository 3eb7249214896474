"""First-order optimizers over :class:`~dora.numerics.Node` parameters."""

from __future__ import annotations

import numpy as np

from .numerics import Node


class SGD:
    def __init__(self, params: list[Node], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.value -= self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def reset_state(self, param: Node, mask=None) -> None:
        pass


class Adam:
    def __init__(self, params: list[Node], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {id(p): np.zeros_like(p.value) for p in self.params}
        self.v = {id(p): np.zeros_like(p.value) for p in self.params}
        # per-entry step counts so reset entries get fresh bias correction
        self.t = {id(p): np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            key = id(p)
            m, v, t = self.m[key], self.v[key], self.t[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            t += 1
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def reset_state(self, param: Node, mask=None) -> None:
        """Forget moment estimates for ``param`` (or the masked entries of it)."""
        key = id(param)
        if mask is None:
            mask = np.ones(param.shape, dtype=bool)
        for buf in (self.m[key], self.v[key], self.t[key]):
            buf[mask] = 0


def make_optimizer(name: str, params: list[Node], lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")
