"""Per-correspondence backbone: perception layer, optional consensus block,
context-normalized residual blocks and the inlier prediction head.

All layers act row-wise on an (n, channels) feature map; the only exchange of
information across rows happens inside context normalization and the
consensus block.  There is no batch axis.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import consensus
from .autodiff import Node

Array = np.ndarray


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int
    d: int = 32
    blocks: int = 6
    lfc_enabled: bool = True
    lfc_k: int = 9
    lfc_heads: int = 2

    def __post_init__(self):
        if self.in_channels < 1 or self.d < 1 or self.blocks < 0:
            raise ValueError("bad backbone dimensions")
        if self.lfc_k < 1 or self.lfc_heads < 1:
            raise ValueError("bad consensus parameters")
        if self.d % self.lfc_heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.lfc_heads}")


def param_schema(cfg: BackboneConfig) -> "OrderedDict[str, tuple[tuple[int, ...], int]]":
    """Ordered map of parameter name -> (shape, fan_in)."""
    d = cfg.d
    out: OrderedDict[str, tuple[tuple[int, ...], int]] = OrderedDict()
    out["perception/w"] = ((cfg.in_channels, d), cfg.in_channels)
    out["perception/b"] = ((d,), cfg.in_channels)
    if cfg.lfc_enabled:
        dh = d // cfg.lfc_heads
        for i in range(cfg.lfc_heads):
            out[f"lfc/head{i}/w"] = ((2 * d, dh), 2 * d)
        out["lfc/w_out"] = ((d, d), d)
        out["lfc/w_fuse"] = ((cfg.lfc_k, d), d)
    for j in range(cfg.blocks):
        out[f"block{j}/w1"] = ((d, d), d)
        out[f"block{j}/b1"] = ((d,), d)
        out[f"block{j}/w2"] = ((d, d), d)
        out[f"block{j}/b2"] = ((d,), d)
    out["head/w"] = ((d, 1), d)
    out["head/b"] = ((1,), d)
    return out


def init_params(cfg: BackboneConfig, rng: np.random.Generator) -> "OrderedDict[str, Array]":
    """Uniform init in +-sqrt(1/fan_in), drawn in schema order."""
    out: OrderedDict[str, Array] = OrderedDict()
    for name, (shape, fan_in) in param_schema(cfg).items():
        bound = float(np.sqrt(1.0 / fan_in))
        out[name] = rng.uniform(-bound, bound, size=shape)
    return out


def param_count(cfg: BackboneConfig) -> int:
    return sum(int(np.prod(shape)) for shape, _ in param_schema(cfg).values())


def _affine(x: Node, w: Node, b: Node) -> Node:
    return ad.add(ad.matmul(x, w), b)


def residual_block(f: Node, w1: Node, b1: Node, w2: Node, b2: Node) -> Node:
    h = ad.context_normalize(f)
    h = ad.relu(_affine(h, w1, b1))
    h = _affine(h, w2, b2)
    return ad.add(f, h)


def predict_head(f: Node, w: Node, b: Node) -> tuple[Node, Node]:
    """Logits and probabilities; p = relu(tanh(logit)) lies in [0, 1)."""
    o = _affine(f, w, b)
    logits = ad.reshape(o, (o.value.shape[0],))
    return logits, ad.relu(ad.tanh(logits))


def forward(x, params: Mapping[str, Node], cfg: BackboneConfig,
            prefix: str = "") -> tuple[Node, Node, Node]:
    """Run the backbone; returns (logits, p, final feature map).

    ``x`` may be a raw (n, in_channels) array or a node when the input is
    itself differentiable (the second stage's stacked input).
    """
    def p(name: str) -> Node:
        return params[prefix + name]

    f = _affine(ad.wrap(x), p("perception/w"), p("perception/b"))
    if cfg.lfc_enabled:
        heads = [p(f"lfc/head{i}/w") for i in range(cfg.lfc_heads)]
        f = consensus.lfc_block(f, heads, p("lfc/w_out"), p("lfc/w_fuse"), cfg.lfc_k)
    for j in range(cfg.blocks):
        f = residual_block(f, p(f"block{j}/w1"), p(f"block{j}/b1"),
                           p(f"block{j}/w2"), p(f"block{j}/b2"))
    logits, prob = predict_head(f, p("head/w"), p("head/b"))
    return logits, prob, f
