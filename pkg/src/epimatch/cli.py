"""Command line surface: gen / train / eval / gradcheck / ablate.

Config and grid files are UTF-8 ``key=value`` lines; blank lines and lines
starting with ``#`` are ignored, unknown keys are an error.
"""
from __future__ import annotations

import argparse
import sys

from . import ablation, checkpoint, evaluation, scenes, training
from .errors import ConfigError
from .pipeline import LossConfig, ModelConfig, ModelParams
from .training import TrainConfig, train

_TRAIN_KEYS = ("lr", "iterations", "batch_size", "seed", "lambda", "class_balance",
               "d", "blocks", "heads", "grad_clip", "checkpoint_every", "log_every")
_GRID_LIST_KEYS = ("lfc", "siamese", "k", "seeds")
_GRID_SCALAR_KEYS = ("iterations", "batch_size", "lr", "d", "blocks", "heads",
                     "lambda", "class_balance", "grad_clip", "holdout")


def _parse_kv_file(path, allowed: tuple[str, ...]) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in allowed:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def _as_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("1", "true", "on", "yes"):
        return True
    if low in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"cannot parse boolean {key}={value!r}")


def _cmd_gen(args) -> int:
    cfg = scenes.SceneConfig(seed=args.seed, pairs=args.pairs, n=args.n,
                             outlier_ratio=args.outlier_ratio,
                             noise_sigma=args.noise)
    records = scenes.gen_dataset(cfg)
    scenes.write_dataset(args.out, records)
    print(f"wrote {len(records)} pairs to {args.out}")
    return 0


def _train_configs(args) -> tuple[TrainConfig, ModelConfig, LossConfig]:
    raw = _parse_kv_file(args.config, _TRAIN_KEYS) if args.config else {}
    tcfg = TrainConfig(
        lr=float(raw.get("lr", 1e-3)),
        iterations=int(raw.get("iterations", 5000)),
        batch_size=int(raw.get("batch_size", 16)),
        seed=int(raw.get("seed", 0)),
        grad_clip=float(raw["grad_clip"]) if "grad_clip" in raw else None,
        log_every=int(raw.get("log_every", 100)),
        checkpoint_every=int(raw.get("checkpoint_every", 1000)),
    )
    mcfg = ModelConfig(
        d=int(raw.get("d", 32)),
        blocks=int(raw.get("blocks", 6)),
        lfc_enabled=args.lfc == "on",
        lfc_k=args.k,
        lfc_heads=int(raw.get("heads", 2)),
    )
    lcfg = LossConfig(
        reg_weight=float(raw.get("lambda", 0.5)),
        siamese=args.siamese,
        class_balance=_as_bool(raw.get("class_balance", "false"), "class_balance"),
    )
    return tcfg, mcfg, lcfg


def _cmd_train(args) -> int:
    records = scenes.read_dataset(args.data)
    tcfg, mcfg, lcfg = _train_configs(args)
    params = ModelParams.init(mcfg, tcfg.seed)
    stats = train(records, params, tcfg, lcfg,
                  log_path=str(args.out) + ".log", ckpt_path=args.out)
    first, last = stats.smoothed()
    print(f"trained {tcfg.iterations} steps in {stats.seconds:.1f}s "
          f"(loss {first:.4f} -> {last:.4f}, skipped {stats.skipped_samples}, "
          f"fallbacks {stats.eight_point_fallbacks})")
    print(f"checkpoint: {args.out}")
    return 0


def _cmd_eval(args) -> int:
    records = scenes.read_dataset(args.data)
    params, _ = checkpoint.load_checkpoint(args.ckpt)
    summary = evaluation.evaluate_params(params, records)
    header = "pairs,precision,recall,fscore,map5,inlier_fraction"
    row = (f"{summary.pairs},{summary.precision:.6f},{summary.recall:.6f},"
           f"{summary.fscore:.6f},{summary.map5:.6f},{summary.inlier_fraction:.6f}")
    with open(args.report, "w", encoding="utf-8") as f:
        f.write(header + "\n" + row + "\n")
    print(header)
    print(row)
    return 0


def _cmd_gradcheck(args) -> int:
    reports = evaluation.gradient_suite(tol=args.tol)
    ok = True
    for name, report in reports.items():
        status = "pass" if report.passed else "FAIL"
        print(f"{name}: max_rel_error={report.max_rel_error:.3e} tol={report.tol:g} {status}")
        ok = ok and report.passed
    return 0 if ok else 1


def _parse_grid(path) -> ablation.AblationGrid:
    raw = _parse_kv_file(path, _GRID_LIST_KEYS + _GRID_SCALAR_KEYS)
    grid = ablation.AblationGrid()
    if "lfc" in raw:
        grid.lfc = [_as_bool(v, "lfc") for v in raw["lfc"].split(",")]
    if "siamese" in raw:
        modes = [v.strip() for v in raw["siamese"].split(",")]
        for m in modes:
            if m not in ("none", "a", "b"):
                raise ConfigError(f"unknown siamese mode {m!r}")
        grid.siamese = modes
    if "k" in raw:
        grid.k = [int(v) for v in raw["k"].split(",")]
    if "seeds" in raw:
        grid.seeds = [int(v) for v in raw["seeds"].split(",")]
    if "iterations" in raw:
        grid.iterations = int(raw["iterations"])
    if "batch_size" in raw:
        grid.batch_size = int(raw["batch_size"])
    if "lr" in raw:
        grid.lr = float(raw["lr"])
    if "d" in raw:
        grid.d = int(raw["d"])
    if "blocks" in raw:
        grid.blocks = int(raw["blocks"])
    if "heads" in raw:
        grid.heads = int(raw["heads"])
    if "lambda" in raw:
        grid.reg_weight = float(raw["lambda"])
    if "class_balance" in raw:
        grid.class_balance = _as_bool(raw["class_balance"], "class_balance")
    if "grad_clip" in raw:
        grid.grad_clip = float(raw["grad_clip"])
    if "holdout" in raw:
        grid.holdout = float(raw["holdout"])
    return grid


def _cmd_ablate(args) -> int:
    records = scenes.read_dataset(args.data)
    grid = _parse_grid(args.grid)
    train_recs, test_recs = ablation.split_holdout(records, grid.holdout)
    rows = ablation.run_ablation(train_recs, test_recs, grid)
    table = ablation.format_report(rows)
    with open(args.report, "w", encoding="utf-8") as f:
        f.write(table)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epimatch",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--outlier-ratio", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("train", help="train a matcher on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--siamese", choices=("none", "a", "b"), default="b")
    p.add_argument("--lfc", choices=("on", "off"), default="on")
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="train/evaluate a grid of variants")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
