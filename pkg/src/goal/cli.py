"""Command line entry point: ``goal {grid,train,diagram,check-grad}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .experiment.data import SyntheticDatasetSpec
from .experiment.diagram import diagram_csv, emit_weight_diagram
from .experiment.grid import run_grid, run_single
from .reference import default_certificates, run_certificate
from .trainer import TrainConfig
from .weights import PAIR_KINDS, TRIPLET_KINDS, all_objectives, combination_name, make_objective

log = logging.getLogger("goal")

DEFAULT_SEEDS = [0, 1, 2]


def load_config(path) -> dict:
    """Read the JSON run configuration; a missing path yields an empty dict."""
    if path is None:
        return {}
    with open(path) as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: top level must be a JSON object")
    return cfg


def _pick(cls, d: dict) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return d


def _dataset_spec(cfg) -> SyntheticDatasetSpec:
    return SyntheticDatasetSpec(**_pick(SyntheticDatasetSpec, cfg.get("dataset", {})))


def _template(cfg, args) -> TrainConfig:
    train_cfg = dict(cfg.get("train", {}))
    for name in ("lr", "epochs", "batch_size", "dim"):
        value = getattr(args, name, None)
        if value is not None:
            train_cfg[name] = value
    train_cfg.pop("objective", None)
    return TrainConfig(**_pick(TrainConfig, train_cfg))


def _objective(cfg, args):
    weights = cfg.get("weights", {})
    obj_cfg = cfg.get("objective", {})
    triplet = args.triplet or obj_cfg.get("triplet", "con")
    pair = args.pair or obj_cfg.get("pair", "con")
    for o in all_objectives(weights):
        if o.key == (triplet, pair):
            return o
    return make_objective(triplet, pair)


def _dump_json(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n", newline="\n")


def _write_text(text: str, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, newline="\n")


def run_file_name(record) -> str:
    t = record.config["objective"]["triplet"]["kind"]
    p = record.config["objective"]["pair"]["kind"]
    return f"{t}_{p}_seed{record.seed}.json"


def cmd_grid(args, cfg) -> int:
    spec = _dataset_spec(cfg)
    template = _template(cfg, args)
    if args.seeds is not None:
        seeds = args.seeds
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = cfg.get("seeds", DEFAULT_SEEDS)
    workers = args.workers or cfg.get("workers", 1)
    report = run_grid(spec, template, seeds, weight_params=cfg.get("weights"), workers=workers)

    out = Path(args.out_dir)
    for rec in report.records:
        _dump_json(rec.to_dict(), out / "runs" / run_file_name(rec))
    _write_text(report.to_csv(), out / "grid.csv")
    _write_text(report.to_pivot_csv(), out / "grid_pivot.csv")
    print(report.to_csv(), end="")
    total = sum(r.duration_s for r in report.records)
    log.info("%d runs, %.1f s of training", len(report.records), total)
    return 0 if report.all_completed else 1


def cmd_train(args, cfg) -> int:
    spec = _dataset_spec(cfg)
    config = replace(_template(cfg, args), objective=_objective(cfg, args))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    record = run_single(spec, config)
    _dump_json(record.to_dict(), Path(args.out_dir) / run_file_name(record))
    name = combination_name(config.objective)
    print(f"{config.objective.label} ({name}) seed={config.seed} status={record.status}")
    if record.final:
        for d in ("i2t", "t2i"):
            print(d, " ".join(f"{k}={v:.4f}" for k, v in record.final[d].items()))
    log.info("duration %.2f s", record.duration_s)
    return 0 if record.status == "completed" else 1


# every registered kind at its default hyperparameters (margin 0.2, scale 10, ...)
DIAGRAMS = [("triplet", k, {}) for k in TRIPLET_KINDS] + [("pair", k, {}) for k in PAIR_KINDS]


def cmd_diagram(args, cfg) -> int:
    params = cfg.get("diagram_params", {})
    if args.family:
        keys = [args.kind] if args.kind else list(
            TRIPLET_KINDS if args.family == "triplet" else PAIR_KINDS
        )
        todo = [(args.family, k, params.get(k, {})) for k in keys]
    else:
        todo = [(f, k, params.get(k, {})) for f, k, _ in DIAGRAMS]
    out = Path(args.out_dir)
    for family, key, p in todo:
        header, rows = emit_weight_diagram(family, key, p, args.resolution)
        path = out / f"diagram_{family}_{key}.csv"
        _write_text(diagram_csv(header, rows), path)
        print(path)
    return 0


def cmd_check_grad(args, cfg) -> int:
    weights = cfg.get("weights", {})
    certs = default_certificates(**{k: v for k, v in weights.items() if k != "eps"})
    seed = args.seed if args.seed is not None else 0
    ok = True
    lines = ["certificate,objective,batches,resampled,max_rel_error,tolerance,passed"]
    for cert in certs:
        res = run_certificate(cert, n_batches=args.batches, seed=seed)
        ok &= res.passed
        lines.append(
            f"{res.name},{res.objective},{res.batches},{res.resampled},"
            f"{res.max_rel_error:.3e},{res.tolerance:.0e},{res.passed}"
        )
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name:13s} {res.objective:12s} max rel err {res.max_rel_error:.3e}"
              f" over {res.batches} batches ({res.resampled} redrawn)")
    _write_text("\n".join(lines) + "\n", Path(args.out_dir) / "check_grad.csv")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="goal", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="run seed (grid: single-seed sweep)")
    common.add_argument("--out-dir", default="results", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grid", parents=[common], help="sweep all 15 combinations")
    g.add_argument("--seeds", type=int, nargs="+")
    g.add_argument("--workers", type=int)
    g.set_defaults(func=cmd_grid)

    t = sub.add_parser("train", parents=[common], help="train one objective")
    t.add_argument("--triplet", choices=list(TRIPLET_KINDS))
    t.add_argument("--pair", choices=list(PAIR_KINDS))
    t.set_defaults(func=cmd_train)

    for p in (g, t):
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--dim", type=int)

    d = sub.add_parser("diagram", parents=[common], help="tabulate weight diagrams")
    d.add_argument("--family", choices=["triplet", "pair"])
    d.add_argument("--kind")
    d.add_argument("--resolution", type=int, default=101)
    d.set_defaults(func=cmd_diagram)

    c = sub.add_parser("check-grad", parents=[common], help="gradient/loss equivalence report")
    c.add_argument("--batches", type=int, default=100)
    c.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = load_config(args.config)
    return args.func(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
