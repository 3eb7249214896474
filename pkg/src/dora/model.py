"""Toy transformer encoder host with adapted projection sites.

Each block is ``h = x + MHA(x); out = h + FFN(h)`` with no normalisation.
Per-head query/key/value projections are stored fused as d x d matrices.
Inputs are real token features, mapped to width ``d`` by a frozen random
embedding. Classification models add a trainable mean-pool + linear head.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError
from .layers import KIND_ORDER, DoraLinear, LayerId, LoraLinear, MatrixKind
from .numerics import Node


@dataclass
class TransformerConfig:
    d: int = 16
    heads: int = 2
    layers: int = 3
    d_ff: int = 32
    seq_len: int = 8
    d_feat: int = 16

    def __post_init__(self):
        for key in ("d", "heads", "layers", "d_ff", "seq_len", "d_feat"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if self.d % self.heads:
            raise ConfigError("heads", f"head count {self.heads} must divide d={self.d}")

    @property
    def d_head(self) -> int:
        return self.d // self.heads

    def site_shape(self, kind: MatrixKind) -> tuple[int, int]:
        if kind is MatrixKind.FFN1:
            return (self.d, self.d_ff)
        if kind is MatrixKind.FFN2:
            return (self.d_ff, self.d)
        return (self.d, self.d)


def init_base(cfg: TransformerConfig, rng: np.random.Generator, n_classes: int = 0) -> dict:
    """Frozen base weights with fan-in scaling.

    Output and FFN-down projections are shrunk by sqrt(2 * layers) so the
    residual stream stays O(1) without normalisation.
    """
    depth_scale = 1.0 / math.sqrt(2 * cfg.layers)
    base = {"embed": rng.normal(0.0, 1.0 / math.sqrt(cfg.d_feat), (cfg.d_feat, cfg.d))}
    for layer in range(cfg.layers):
        for kind in KIND_ORDER:
            d_in, d_out = cfg.site_shape(kind)
            std = 1.0 / math.sqrt(d_in)
            if kind is MatrixKind.FFN1:
                std *= math.sqrt(2.0)
            if kind in (MatrixKind.OUTPUT, MatrixKind.FFN2):
                std *= depth_scale
            base[LayerId(layer, kind)] = rng.normal(0.0, std, (d_in, d_out))
        base[(layer, "b1")] = np.zeros((1, cfg.d_ff))
        base[(layer, "b2")] = np.zeros((1, cfg.d))
    if n_classes:
        base["head_w"] = rng.normal(0.0, 1.0 / math.sqrt(cfg.d), (cfg.d, n_classes))
        base["head_b"] = np.zeros((1, n_classes))
    return base


def with_deltas(base: dict, deltas: dict) -> dict:
    """Copy of ``base`` with ``deltas[site]`` added to each listed site."""
    out = copy.deepcopy(base)
    for site, delta in deltas.items():
        out[site] = out[site] + delta
    return out


class Block:
    def __init__(self, index: int, sites: dict, b1: np.ndarray, b2: np.ndarray):
        self.index = index
        self.wq = sites[MatrixKind.QUERY]
        self.wk = sites[MatrixKind.KEY]
        self.wv = sites[MatrixKind.VALUE]
        self.wo = sites[MatrixKind.OUTPUT]
        self.wf1 = sites[MatrixKind.FFN1]
        self.wf2 = sites[MatrixKind.FFN2]
        self.b1 = Node(np.array(b1), name=f"{index}.b1")
        self.b2 = Node(np.array(b2), name=f"{index}.b2")

    def sites(self) -> list:
        return [self.wq, self.wk, self.wv, self.wo, self.wf1, self.wf2]


class Encoder:
    """Encoder over frozen ``base`` weights.

    ``adapter`` selects the site type: ``"dora"`` (rank = components per
    site), ``"lora"`` (fixed rank, or a per-site dict of ranks), or ``"none"``
    (rank-0 DoRA sites, i.e. the frozen reference).
    """

    def __init__(self, cfg: TransformerConfig, base: dict, adapter: str = "dora",
                 rank: int | dict = 0, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.adapter = adapter
        self.embed = Node(np.array(base["embed"]), name="embed")
        self.blocks: list[Block] = []
        for layer in range(cfg.layers):
            sites = {}
            for kind in KIND_ORDER:
                lid = LayerId(layer, kind)
                r = rank.get(lid, 0) if isinstance(rank, dict) else rank
                if adapter == "lora":
                    sites[kind] = LoraLinear(base[lid], r, lid, rng)
                elif adapter in ("dora", "none"):
                    sites[kind] = DoraLinear(base[lid], 0 if adapter == "none" else r, lid, rng)
                else:
                    raise ConfigError("adapter", f"unknown adapter {adapter!r}")
            self.blocks.append(Block(layer, sites, base[(layer, "b1")], base[(layer, "b2")]))
        self.head_w = self.head_b = None
        if "head_w" in base:
            self.head_w = Node(np.array(base["head_w"]), requires_grad=True, name="head_w")
            self.head_b = Node(np.array(base["head_b"]), requires_grad=True, name="head_b")

    @property
    def sites(self) -> list:
        return [s for block in self.blocks for s in block.sites()]

    def dora_layers(self) -> list[DoraLinear]:
        return [s for s in self.sites if isinstance(s, DoraLinear)]

    def site(self, lid: LayerId):
        return self.blocks[lid.layer].sites()[lid.kind.code]

    def adapter_params(self) -> list[Node]:
        return [p for s in self.sites for p in s.params()]

    def head_params(self) -> list[Node]:
        return [] if self.head_w is None else [self.head_w, self.head_b]

    def trainable_params(self) -> list[Node]:
        return self.adapter_params() + self.head_params()

    def base_params(self) -> list[Node]:
        """Frozen tensors of the host (embedding excluded)."""
        out = []
        for block in self.blocks:
            out.extend(s.w0 for s in block.sites())
            out.extend([block.b1, block.b2])
        return out

    def base_weights(self) -> dict:
        """Current host weights in the ``init_base`` layout."""
        base = {"embed": self.embed.value.copy()}
        for block in self.blocks:
            for kind, s in zip(KIND_ORDER, block.sites()):
                base[LayerId(block.index, kind)] = s.w0.value.copy()
            base[(block.index, "b1")] = block.b1.value.copy()
            base[(block.index, "b2")] = block.b2.value.copy()
        if self.head_w is not None:
            base["head_w"] = self.head_w.value.copy()
            base["head_b"] = self.head_b.value.copy()
        return base

    def __call__(self, x) -> Node:
        return encoder_forward(self, x)


def _split_heads(x: Node, heads: int) -> Node:
    b, n, d = x.shape
    return nx.permute(nx.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Node) -> Node:
    b, h, n, dh = x.shape
    return nx.reshape(nx.permute(x, (0, 2, 1, 3)), (b, n, h * dh))


def attention_weights(block: Block, x: Node, heads: int) -> Node:
    """Softmax(q k^T / sqrt(d_h)) per head, shape (batch, heads, n, n)."""
    q = _split_heads(block.wq(x), heads)
    k = _split_heads(block.wk(x), heads)
    d_head = q.shape[-1]
    scores = nx.scale(nx.matmul(q, nx.transpose(k)), 1.0 / math.sqrt(d_head))
    return nx.softmax_rows(scores)


def mha(block: Block, x, heads: int) -> Node:
    x = _batched(x)
    att = attention_weights(block, x, heads)
    v = _split_heads(block.wv(x), heads)
    return block.wo(_merge_heads(nx.matmul(att, v)))


def ffn(block: Block, x) -> Node:
    hidden = nx.relu(nx.add(block.wf1(x), block.b1))
    return nx.add(block.wf2(hidden), block.b2)


def _batched(x) -> Node:
    x = nx.as_node(x)
    if x.value.ndim == 2:
        return nx.reshape(x, (1,) + x.shape)
    if x.value.ndim != 3:
        raise DimensionError(f"expected (n, d) or (batch, n, d) input, got {x.shape}")
    return x


def encoder_forward(model: Encoder, x) -> Node:
    """Token features (batch, n, d_feat) or (n, d_feat) -> hidden states of width d."""
    x = nx.as_node(x)
    squeeze = x.value.ndim == 2
    if x.shape[-1] != model.cfg.d_feat:
        raise DimensionError(f"input width {x.shape[-1]} != d_feat {model.cfg.d_feat}")
    h = nx.matmul(_batched(x), model.embed)
    for block in model.blocks:
        h = nx.add(h, mha(block, h, model.cfg.heads))
        h = nx.add(h, ffn(block, h))
    if squeeze:
        h = nx.reshape(h, h.shape[1:])
    return h


def head_readout(model: Encoder, x) -> Node:
    """Mean-pool the encoder output over positions, then the task head."""
    if model.head_w is None:
        raise ConfigError("n_classes", "model has no task head")
    h = _batched(encoder_forward(model, x))
    pooled = nx.reshape(nx.mean(h, axis=1), (h.shape[0], h.shape[2]))
    return nx.add(nx.matmul(pooled, model.head_w), model.head_b)


def reference_forward(cfg: TransformerConfig, base: dict, x: np.ndarray) -> np.ndarray:
    """Frozen-base forward with no adapters, for transparency checks."""
    return encoder_forward(Encoder(cfg, base, adapter="none"), x).value
