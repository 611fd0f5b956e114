"""Deterministic training loop with per-sample graphs and Adam.

Batching is a plain Python loop: each sample builds its own graph, gradients
are summed and divided by the number of contributing samples.  Everything is
seeded, so a fixed (dataset, config) pair reproduces bit-identical parameters
on one platform.
"""
from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import pipeline
from .errors import (
    DegenerateLabelsError,
    NoInliersError,
    RankDeficientError,
)
from .pipeline import LossConfig, ModelParams
from .scenes import SampleRecord

Array = np.ndarray

_SHUFFLE_STREAM = 0x73687566


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    iterations: int = 5000
    seed: int = 0
    grad_clip: float | None = None   # global norm bound; None disables
    log_every: int = 100
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("bad training configuration")


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, arrays: dict[str, Array]):
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.t = 0


def adam_step(arrays: dict[str, Array], grads: dict[str, Array],
              state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``arrays``."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for k, p in arrays.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


@dataclass
class TrainStats:
    step_losses: list[float] = field(default_factory=list)
    skipped_samples: int = 0
    aborted_steps: int = 0
    eight_point_fallbacks: int = 0
    seconds: float = 0.0

    def smoothed(self, window: int = 200) -> tuple[float, float]:
        """Mean loss over the first and last ``window`` recorded steps."""
        if not self.step_losses:
            return float("nan"), float("nan")
        w = max(1, min(window, len(self.step_losses)))
        return float(np.mean(self.step_losses[:w])), float(np.mean(self.step_losses[-w:]))


class _EpochSampler:
    """Shuffled epoch order, reshuffled deterministically when exhausted."""

    def __init__(self, count: int, seed: int):
        self._rng = np.random.Generator(
            np.random.Philox(key=np.array([seed, _SHUFFLE_STREAM], dtype=np.uint64)))
        self._count = count
        self._order = self._rng.permutation(count)
        self._pos = 0

    def draw(self, k: int) -> list[int]:
        out: list[int] = []
        while len(out) < k:
            if self._pos >= self._count:
                self._order = self._rng.permutation(self._count)
                self._pos = 0
            out.append(int(self._order[self._pos]))
            self._pos += 1
        return out


def train(records: list[SampleRecord], params: ModelParams, tcfg: TrainConfig,
          lcfg: LossConfig, log_path=None, ckpt_path=None) -> TrainStats:
    """Optimize ``params`` in place; returns loss history and counters.

    Samples raising DegenerateLabels / NoInliers / RankDeficient are skipped
    and counted.  A non-finite accumulated gradient aborts the step without
    touching the parameters.  Checkpoints go to ``ckpt_path`` at the end and
    every ``checkpoint_every`` steps; log rows are ``step,loss,seconds``.
    """
    if not records:
        raise ValueError("empty dataset")
    from . import checkpoint as ckpt_io   # deferred; checkpoint imports pipeline

    sampler = _EpochSampler(len(records), tcfg.seed)
    state = AdamState(params.arrays)
    stats = TrainStats()
    counter: Counter = Counter()
    start = time.perf_counter()
    log_file = open(log_path, "a", encoding="utf-8") if log_path is not None else None
    window: list[float] = []

    try:
        for step in range(1, tcfg.iterations + 1):
            grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
            losses: list[float] = []
            for idx in sampler.draw(tcfg.batch_size):
                rec = records[idx]
                leaves = {k: ad.Node(v) for k, v in params.arrays.items()}
                try:
                    loss = pipeline.sample_loss(rec.coords, rec.labels, rec.e,
                                                leaves, params.config, lcfg, counter)
                except (DegenerateLabelsError, NoInliersError, RankDeficientError):
                    stats.skipped_samples += 1
                    continue
                ad.backward(loss)
                for k in grads:
                    g = leaves[k].grad
                    if g is not None:
                        grads[k] += g
                losses.append(float(loss.value))

            if not losses:
                stats.aborted_steps += 1
                continue
            inv = 1.0 / len(losses)
            finite = True
            for k in grads:
                grads[k] *= inv
                if not np.isfinite(grads[k]).all():
                    finite = False
            if not finite or not np.isfinite(losses).all():
                stats.aborted_steps += 1
                continue

            if tcfg.grad_clip is not None:
                norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
                if norm > tcfg.grad_clip:
                    factor = tcfg.grad_clip / norm
                    for k in grads:
                        grads[k] *= factor

            adam_step(params.arrays, grads, state, tcfg)
            mean_loss = float(np.mean(losses))
            stats.step_losses.append(mean_loss)
            window.append(mean_loss)

            if log_file is not None and step % tcfg.log_every == 0:
                elapsed = time.perf_counter() - start
                log_file.write(f"{step},{np.mean(window):.6f},{elapsed:.3f}\n")
                log_file.flush()
                window.clear()
            if (ckpt_path is not None and tcfg.checkpoint_every > 0
                    and step % tcfg.checkpoint_every == 0):
                ckpt_io.save_checkpoint(ckpt_path, params, lcfg)
    finally:
        if log_file is not None:
            log_file.close()

    if ckpt_path is not None:
        ckpt_io.save_checkpoint(ckpt_path, params, lcfg)
    stats.eight_point_fallbacks = counter.get("eight_point_fallback", 0)
    stats.seconds = time.perf_counter() - start
    return stats
