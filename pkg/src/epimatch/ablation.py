"""Ablation harness: train one model per grid cell and tabulate metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

from . import evaluation
from .pipeline import LossConfig, ModelConfig, ModelParams
from .scenes import SampleRecord
from .training import TrainConfig, train


@dataclass
class AblationGrid:
    """Cartesian grid over the consensus block, Siamese mode and k.

    The remaining fields configure every cell identically; one model is
    trained per (lfc, siamese, k, seed) combination.
    """

    lfc: list[bool] = field(default_factory=lambda: [True])
    siamese: list[str] = field(default_factory=lambda: ["b"])
    k: list[int] = field(default_factory=lambda: [9])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    iterations: int = 1000
    batch_size: int = 16
    lr: float = 1e-3
    d: int = 32
    blocks: int = 6
    heads: int = 2
    reg_weight: float = 0.5
    class_balance: bool = False
    grad_clip: float | None = None
    holdout: float = 0.2


REPORT_COLUMNS = ("lfc", "siamese", "k", "seed", "precision", "recall", "fscore", "map5")


def run_ablation(train_records: list[SampleRecord], test_records: list[SampleRecord],
                 grid: AblationGrid) -> list[dict]:
    """Train and evaluate every grid cell; rows come back in grid order."""
    rows: list[dict] = []
    for lfc_on in grid.lfc:
        for mode in grid.siamese:
            for k in grid.k:
                for seed in grid.seeds:
                    mcfg = ModelConfig(d=grid.d, blocks=grid.blocks, lfc_enabled=lfc_on,
                                       lfc_k=k, lfc_heads=grid.heads)
                    lcfg = LossConfig(reg_weight=grid.reg_weight, siamese=mode,
                                      class_balance=grid.class_balance)
                    tcfg = TrainConfig(lr=grid.lr, batch_size=grid.batch_size,
                                       iterations=grid.iterations, seed=seed,
                                       grad_clip=grid.grad_clip,
                                       checkpoint_every=0)
                    params = ModelParams.init(mcfg, seed)
                    train(train_records, params, tcfg, lcfg)
                    summary = evaluation.evaluate_params(params, test_records)
                    rows.append({
                        "lfc": "on" if lfc_on else "off",
                        "siamese": mode,
                        "k": k,
                        "seed": seed,
                        "precision": summary.precision,
                        "recall": summary.recall,
                        "fscore": summary.fscore,
                        "map5": summary.map5,
                    })
    return rows


def format_report(rows: list[dict]) -> str:
    """Comma-separated table with a header row."""
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        cells = []
        for col in REPORT_COLUMNS:
            value = row[col]
            cells.append(f"{value:.6f}" if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def split_holdout(records: list[SampleRecord], holdout: float
                  ) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """Deterministic tail split: the last ``holdout`` fraction becomes test."""
    if not 0.0 < holdout < 1.0:
        raise ValueError("holdout must be in (0, 1)")
    cut = max(1, int(round(len(records) * (1.0 - holdout))))
    cut = min(cut, len(records) - 1)
    return records[:cut], records[cut:]
