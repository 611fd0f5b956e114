"""Two-stage matcher: classify correspondences, estimate E, iterate once.

Stage 1 sees the raw (n, 4) coordinates and outputs per-row inlier
probabilities ``p`` plus an essential matrix from the probability-weighted
eight-point solve.  Stage 2 re-runs the backbone on the coordinates stacked
with stage 1's epipolar residuals and probabilities.  The training loss sums
a classification and a weighted regression term over both stages.

Two Siamese variants exploit that reversing the views of a correspondence
set keeps labels and transposes the essential matrix.  Design "a" evaluates
the full loss a second time on the reversed set with shared parameters.
Design "b" re-enters only stage 2: the reversed coordinates are stacked with
residuals under the transposed stage-1 estimate and the forward stage-1
probabilities, adding one extra loss term without any new parameters.
"""
from __future__ import annotations

from collections import Counter, OrderedDict
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import backbone, geometry
from .autodiff import Node
from .errors import DegenerateLabelsError, NoInliersError

Array = np.ndarray

# distinct Philox stream key for parameter init, so a shared seed does not
# replay scene-generation draws
_PARAM_STREAM = 0x70617261


@dataclass(frozen=True)
class ModelConfig:
    """Shared shape of both stages; stage input widths are fixed at 4 and 6."""

    d: int = 32
    blocks: int = 6
    lfc_enabled: bool = True
    lfc_k: int = 9
    lfc_heads: int = 2

    def stage1(self) -> backbone.BackboneConfig:
        return backbone.BackboneConfig(in_channels=4, d=self.d, blocks=self.blocks,
                                       lfc_enabled=self.lfc_enabled,
                                       lfc_k=self.lfc_k, lfc_heads=self.lfc_heads)

    def stage2(self) -> backbone.BackboneConfig:
        return backbone.BackboneConfig(in_channels=6, d=self.d, blocks=self.blocks,
                                       lfc_enabled=self.lfc_enabled,
                                       lfc_k=self.lfc_k, lfc_heads=self.lfc_heads)


@dataclass
class LossConfig:
    reg_weight: float = 0.5
    siamese: str = "b"
    class_balance: bool = False

    def __post_init__(self):
        if self.reg_weight < 0.0:
            raise ValueError("reg_weight must be non-negative")
        if self.siamese not in ("none", "a", "b"):
            raise ValueError(f"unknown siamese mode {self.siamese!r}")


def param_schema(cfg: ModelConfig) -> "OrderedDict[str, tuple[tuple[int, ...], int]]":
    out: OrderedDict[str, tuple[tuple[int, ...], int]] = OrderedDict()
    for prefix, bcfg in (("stage1/", cfg.stage1()), ("stage2/", cfg.stage2())):
        for name, spec in backbone.param_schema(bcfg).items():
            out[prefix + name] = spec
    return out


@dataclass
class ModelParams:
    """Named parameter arrays for both stages plus their configuration."""

    config: ModelConfig
    arrays: "OrderedDict[str, Array]"

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        rng = np.random.Generator(
            np.random.Philox(key=np.array([seed, _PARAM_STREAM], dtype=np.uint64)))
        arrays: OrderedDict[str, Array] = OrderedDict()
        for name, (shape, fan_in) in param_schema(config).items():
            bound = float(np.sqrt(1.0 / fan_in))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config=config, arrays=arrays)

    def leaves(self) -> dict[str, Node]:
        return {k: Node(v) for k, v in self.arrays.items()}

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config,
                           OrderedDict((k, v.copy()) for k, v in self.arrays.items()))


@dataclass
class StageOutput:
    logits: Node     # (n,)
    p: Node          # (n,), relu(tanh(logits))
    e_hat: Node      # (3, 3) essential estimate
    residual: Node   # (n,) symmetric epipolar distances under e_hat


def eight_point_node(coords: Array, weights: Node, stats: Counter | None = None) -> Node:
    """Differentiable weighted eight-point solve.

    When fewer than 8 weights are effective the solve falls back to uniform
    1/n weights and the result carries no gradient (the substitution is
    counted in ``stats``).  Otherwise gradients flow to the weights through
    the eigenvector perturbation with its spectral-gap guard.
    """
    w = weights.value
    n = w.shape[0]
    if int(np.sum(w > geometry.WEIGHT_FLOOR)) < 8:
        if stats is not None:
            stats["eight_point_fallback"] += 1
        e, _ = geometry._solve_eight_point(coords, np.full(n, 1.0 / n))
        return Node(e)
    e, cache = geometry._solve_eight_point(coords, w)
    return Node(e, ((weights, lambda g: geometry.eight_point_grad_w(cache, g)),))


def residual_node(coords: Array, e: Node) -> Node:
    """Differentiable row-wise symmetric epipolar distance under ``e``.

    Mirrors :func:`geometry.residuals` (same symmetric evaluation order) but
    keeps the graph alive through both numerator and denominator.
    """
    x1, x2 = geometry.homogenize(coords)
    a = ad.matmul(x1, ad.transpose(e))
    b = ad.matmul(x2, e)
    num = ad.scale(ad.add(ad.reduce_sum(ad.mul(x2, a), axis=1),
                          ad.reduce_sum(ad.mul(x1, b), axis=1)), 0.5)
    ra = ad.slice_last(a, 0, 2)
    rb = ad.slice_last(b, 0, 2)
    den = ad.add(ad.add(ad.reduce_sum(ad.mul(ra, ra), axis=1),
                        ad.reduce_sum(ad.mul(rb, rb), axis=1)),
                 geometry.EPIPOLAR_EPS)
    return ad.div(ad.mul(num, num), den)


def _stage_pass(x, coords: Array, prefix: str, params: Mapping[str, Node],
                bcfg: backbone.BackboneConfig, stats: Counter | None) -> StageOutput:
    logits, p, _ = backbone.forward(x, params, bcfg, prefix=prefix)
    e_hat = eight_point_node(coords, p, stats)
    resid = residual_node(coords, e_hat)
    return StageOutput(logits=logits, p=p, e_hat=e_hat, residual=resid)


def _stack_stage2_input(coords: Array, residual: Node, p: Node) -> Node:
    n = coords.shape[0]
    return ad.concat([ad.wrap(coords), ad.reshape(residual, (n, 1)),
                      ad.reshape(p, (n, 1))], axis=1)


def two_stage_forward(coords: Array, params: Mapping[str, Node], cfg: ModelConfig,
                      stats: Counter | None = None) -> tuple[StageOutput, StageOutput]:
    """Run both stages; stage 2 consumes ``[coords || residual_1 || p_1]``."""
    coords = np.asarray(coords, dtype=np.float64)
    out1 = _stage_pass(coords, coords, "stage1/", params, cfg.stage1(), stats)
    x2 = _stack_stage2_input(coords, out1.residual, out1.p)
    out2 = _stage_pass(x2, coords, "stage2/", params, cfg.stage2(), stats)
    return out1, out2


def reverse_stage2(coords: Array, p1: Node, e1: Node, params: Mapping[str, Node],
                   cfg: ModelConfig, stats: Counter | None = None) -> StageOutput:
    """Reverse branch of Siamese design "b".

    The reversed correspondence set is stacked with residuals under the
    transposed stage-1 estimate and the forward stage-1 probabilities, then
    fed through the shared stage-2 module.
    """
    coords = np.asarray(coords, dtype=np.float64)
    rev = geometry.reverse(coords)
    r1 = residual_node(rev, ad.transpose(e1))
    x2 = _stack_stage2_input(rev, r1, p1)
    return _stage_pass(x2, rev, "stage2/", params, cfg.stage2(), stats)


# --- losses ------------------------------------------------------------------

def loss_cls(logits: Node, labels: Array, class_balance: bool = False) -> Node:
    """Mean binary cross-entropy on logits, optionally class-balanced.

    With balancing on, positive and negative rows are reweighted by inverse
    class frequency (each class contributes half the total weight); a sample
    containing a single class is refused.
    """
    labels = np.asarray(labels, dtype=bool)
    n = labels.shape[0]
    lf = labels.astype(np.float64)
    if class_balance:
        npos = int(labels.sum())
        nneg = n - npos
        if npos == 0 or nneg == 0:
            raise DegenerateLabelsError(f"{npos} positives of {n} rows")
        wvec = np.where(labels, 0.5 / npos, 0.5 / nneg)
    else:
        wvec = np.full(n, 1.0 / n)
    per_row = ad.sub(ad.softplus(logits), ad.mul(logits, lf))
    return ad.reduce_sum(ad.mul(per_row, wvec))


def loss_reg(e_hat, e_gt: Array, coords: Array, labels: Array,
             eps: float = geometry.EPIPOLAR_EPS) -> Node:
    """Mean epipolar regression error of ``e_hat`` over ground-truth inliers.

    Each inlier contributes its squared algebraic error under ``e_hat``
    divided by the squared epipolar line normals of the ground-truth matrix,
    so the denominator is a constant and gradients only flow through the
    numerator.
    """
    labels = np.asarray(labels, dtype=bool)
    if not labels.any():
        raise NoInliersError("no ground-truth inliers for the regression loss")
    sel = np.asarray(coords, dtype=np.float64)[labels]
    x1, x2 = geometry.homogenize(sel)
    e_gt = np.asarray(e_gt, dtype=np.float64)
    a_gt = x1 @ e_gt.T
    b_gt = x2 @ e_gt
    den = (a_gt[:, 0] ** 2 + a_gt[:, 1] ** 2) + (b_gt[:, 0] ** 2 + b_gt[:, 1] ** 2) + eps
    # numerator averaged over both evaluation orders so that reversing the
    # views and transposing both matrices reproduces the value bit for bit
    e_node = ad.wrap(e_hat)
    u = ad.scale(ad.add(
        ad.reduce_sum(ad.mul(x2, ad.matmul(x1, ad.transpose(e_node))), axis=1),
        ad.reduce_sum(ad.mul(x1, ad.matmul(x2, e_node)), axis=1)), 0.5)
    scale = 1.0 / (den * sel.shape[0])
    return ad.reduce_sum(ad.mul(ad.mul(u, u), scale))


def _loss_from_outputs(outputs, coords: Array, labels: Array, e_gt: Array,
                       lcfg: LossConfig) -> Node:
    total = None
    for out in outputs:
        term = loss_cls(out.logits, labels, lcfg.class_balance)
        if lcfg.reg_weight != 0.0:
            term = ad.add(term, ad.scale(loss_reg(out.e_hat, e_gt, coords, labels),
                                         lcfg.reg_weight))
        total = term if total is None else ad.add(total, term)
    return total


def loss_total(coords: Array, labels: Array, e_gt: Array, params: Mapping[str, Node],
               cfg: ModelConfig, lcfg: LossConfig,
               stats: Counter | None = None) -> Node:
    """Two-stage loss: sum over stages of cls + reg_weight * reg."""
    out1, out2 = two_stage_forward(coords, params, cfg, stats)
    return _loss_from_outputs((out1, out2), coords, labels, e_gt, lcfg)


def siamese_loss_a(coords: Array, labels: Array, e_gt: Array,
                   params: Mapping[str, Node], cfg: ModelConfig, lcfg: LossConfig,
                   stats: Counter | None = None) -> Node:
    """Full Siamese: the complete loss on both view orders, shared weights."""
    fwd = loss_total(coords, labels, e_gt, params, cfg, lcfg, stats)
    rev = loss_total(geometry.reverse(coords), labels,
                     np.asarray(e_gt).T, params, cfg, lcfg, stats)
    return ad.add(fwd, rev)


def siamese_loss_b(coords: Array, labels: Array, e_gt: Array,
                   params: Mapping[str, Node], cfg: ModelConfig, lcfg: LossConfig,
                   stats: Counter | None = None) -> Node:
    """Partial Siamese: forward loss plus a stage-2-only reversed term."""
    out1, out2 = two_stage_forward(coords, params, cfg, stats)
    base = _loss_from_outputs((out1, out2), coords, labels, e_gt, lcfg)
    rev_out = reverse_stage2(coords, out1.p, out1.e_hat, params, cfg, stats)
    e_gt_t = np.asarray(e_gt).T
    extra = loss_cls(rev_out.logits, labels, lcfg.class_balance)
    if lcfg.reg_weight != 0.0:
        rev_coords = geometry.reverse(np.asarray(coords, dtype=np.float64))
        extra = ad.add(extra, ad.scale(
            loss_reg(rev_out.e_hat, e_gt_t, rev_coords, labels), lcfg.reg_weight))
    return ad.add(base, extra)


def sample_loss(coords: Array, labels: Array, e_gt: Array,
                params: Mapping[str, Node], cfg: ModelConfig, lcfg: LossConfig,
                stats: Counter | None = None) -> Node:
    """Training loss for one sample, dispatching on the Siamese mode."""
    fn = {"none": loss_total, "a": siamese_loss_a, "b": siamese_loss_b}[lcfg.siamese]
    return fn(coords, labels, e_gt, params, cfg, lcfg, stats)


def predict(coords: Array, params: ModelParams) -> tuple[Array, Array, Array]:
    """Numeric forward pass; returns stage-2 (logits, p, e_hat) values."""
    leaves = params.leaves()
    _, out2 = two_stage_forward(coords, leaves, params.config)
    return out2.logits.value, out2.p.value, out2.e_hat.value
