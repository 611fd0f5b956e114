"""Evaluation: match metrics, pose metrics, and the gradient check suite."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import consensus, geometry, pipeline, scenes
from .autodiff import GradReport, Node
from .errors import AmbiguousCheiralityError, NoInliersError
from .pipeline import LossConfig, ModelConfig, ModelParams

Array = np.ndarray


def classify(logits: Array) -> Array:
    """Predicted inlier mask: strictly positive logit."""
    return np.asarray(logits) > 0.0


@dataclass
class MatchMetrics:
    precision: float
    recall: float
    fscore: float


def match_metrics(predicted: Array, labels: Array) -> MatchMetrics:
    """Precision/recall/F-score of a predicted inlier mask.

    Empty denominators yield 0 rather than an error, so an all-negative
    prediction scores zero recall instead of crashing.
    """
    predicted = np.asarray(predicted, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    tp = int((predicted & labels).sum())
    npred = int(predicted.sum())
    npos = int(labels.sum())
    precision = tp / npred if npred else 0.0
    recall = tp / npos if npos else 0.0
    fscore = (2.0 * precision * recall / (precision + recall)
              if precision + recall > 0.0 else 0.0)
    return MatchMetrics(precision=precision, recall=recall, fscore=fscore)


@dataclass
class PoseMetrics:
    map5: float
    rot_errors: list[float]
    trans_errors: list[float]


def pose_metrics(predict_fn: Callable[[Array], tuple[Array, Array]],
                 records: list[scenes.SampleRecord],
                 threshold_deg: float = 5.0) -> PoseMetrics:
    """Fraction of pairs with both pose errors under ``threshold_deg``.

    ``predict_fn`` maps coordinates to (logits, essential estimate).  Pairs
    where pose recovery fails (no predicted inliers, tied cheirality) count
    as infinite error.
    """
    rot_errors: list[float] = []
    trans_errors: list[float] = []
    for rec in records:
        logits, e_hat = predict_fn(rec.coords)
        try:
            pose = geometry.recover_pose(e_hat, rec.coords, classify(logits))
            rot = geometry.rotation_error_deg(pose.r, rec.pose.r)
            trans = geometry.translation_error_deg(pose.t, rec.pose.t)
        except (NoInliersError, AmbiguousCheiralityError):
            rot = trans = float("inf")
        rot_errors.append(rot)
        trans_errors.append(trans)
    hits = [max(r, t) < threshold_deg for r, t in zip(rot_errors, trans_errors)]
    map5 = float(np.mean(hits)) if hits else 0.0
    return PoseMetrics(map5=map5, rot_errors=rot_errors, trans_errors=trans_errors)


@dataclass
class EvalSummary:
    pairs: int
    precision: float
    recall: float
    fscore: float
    map5: float
    inlier_fraction: float


def model_predict_fn(params: ModelParams) -> Callable[[Array], tuple[Array, Array]]:
    """Closure over frozen parameters for use with :func:`pose_metrics`."""
    def fn(coords: Array) -> tuple[Array, Array]:
        logits, _, e_hat = pipeline.predict(coords, params)
        return logits, e_hat
    return fn


def evaluate_params(params: ModelParams, records: list[scenes.SampleRecord],
                    with_pose: bool = True) -> EvalSummary:
    """Mean match metrics over pairs, plus pose mAP when requested."""
    if not records:
        raise ValueError("empty evaluation set")
    per_pair: list[MatchMetrics] = []
    preds: list[tuple[Array, Array]] = []
    for rec in records:
        logits, _, e_hat = pipeline.predict(rec.coords, params)
        per_pair.append(match_metrics(classify(logits), rec.labels))
        preds.append((logits, e_hat))
    if with_pose:
        cached = iter(preds)
        pm = pose_metrics(lambda coords: next(cached), records)
        map5 = pm.map5
    else:
        map5 = float("nan")
    total = sum(rec.labels.shape[0] for rec in records)
    inliers = sum(int(rec.labels.sum()) for rec in records)
    return EvalSummary(
        pairs=len(records),
        precision=float(np.mean([m.precision for m in per_pair])),
        recall=float(np.mean([m.recall for m in per_pair])),
        fscore=float(np.mean([m.fscore for m in per_pair])),
        map5=map5,
        inlier_fraction=inliers / total,
    )


def all_positive_baseline_fscore(records: list[scenes.SampleRecord]) -> float:
    """F-score of predicting every row as inlier: 2q / (1 + q)."""
    total = sum(rec.labels.shape[0] for rec in records)
    q = sum(int(rec.labels.sum()) for rec in records) / total
    return 2.0 * q / (1.0 + q)


# --- gradient check suite -----------------------------------------------------

# a small but non-degenerate instance: 16 rows, 10 of them inliers
_SUITE_SCENE = scenes.SceneConfig(seed=29, pairs=1, n=16, outlier_ratio=0.375,
                                  noise_sigma=1e-3)
_SUITE_MODEL = ModelConfig(d=8, blocks=2, lfc_enabled=True, lfc_k=3, lfc_heads=2)
# param seed picked so finite differences sit well clear of tolerance; the
# loss is only piecewise smooth (knn graph flips, relu kinks) and unlucky
# instances probe a kink
_SUITE_SEED = 41


def gradient_suite(step: float = 1e-5, tol: float = 1e-4) -> dict[str, GradReport]:
    """Finite-difference checks of every differentiable building block.

    Covers the consensus block, both loss heads and the three full training
    losses on a 16-row scene with an 8-channel model (k=3, 2 heads).
    """
    rec = scenes.gen_scene(_SUITE_SCENE, 0)
    coords, labels, e_gt = rec.coords, rec.labels, rec.e
    model = ModelParams.init(_SUITE_MODEL, _SUITE_SEED)
    rng = np.random.Generator(np.random.Philox(key=np.array([_SUITE_SEED, 0xF00D],
                                                            dtype=np.uint64)))
    reports: dict[str, GradReport] = {}

    # lfc_block: gradient w.r.t. the input features and every block parameter,
    # probed through a fixed random projection to make the loss a scalar
    bcfg = _SUITE_MODEL.stage1()
    feat = rng.normal(size=(16, bcfg.d))
    probe = rng.normal(size=(16, bcfg.d))
    lfc_params = {
        "f": feat,
        "head0": model.arrays["stage1/lfc/head0/w"],
        "head1": model.arrays["stage1/lfc/head1/w"],
        "w_out": model.arrays["stage1/lfc/w_out"],
        "w_fuse": model.arrays["stage1/lfc/w_fuse"],
    }

    def lfc_loss(leaves):
        out = consensus.lfc_block(leaves["f"], [leaves["head0"], leaves["head1"]],
                                  leaves["w_out"], leaves["w_fuse"], bcfg.lfc_k)
        return ad.reduce_sum(ad.mul(out, probe))

    reports["lfc_block"] = ad.finite_diff_check(lfc_loss, lfc_params, step, tol)

    # classification loss w.r.t. the logits
    logits0 = rng.normal(size=16)
    reports["loss_cls"] = ad.finite_diff_check(
        lambda leaves: pipeline.loss_cls(leaves["logits"], labels, True),
        {"logits": logits0}, step, tol)

    # regression loss w.r.t. a free essential estimate
    e0 = rng.normal(size=(3, 3))
    e0 /= np.linalg.norm(e0)
    reports["loss_reg"] = ad.finite_diff_check(
        lambda leaves: pipeline.loss_reg(leaves["e_hat"], e_gt, coords, labels),
        {"e_hat": e0}, step, tol)

    # the full training losses w.r.t. every model parameter
    for name, mode in (("loss_total", "none"), ("siamese_loss_a", "a"),
                       ("siamese_loss_b", "b")):
        lcfg = LossConfig(siamese=mode)
        reports[name] = ad.finite_diff_check(
            lambda leaves: pipeline.sample_loss(coords, labels, e_gt, leaves,
                                                _SUITE_MODEL, lcfg),
            model.arrays, step, tol)
    return reports
