"""Single runs and the 15-combination x seeds grid."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ..trainer import RunRecord, TrainConfig, init_model, train
from ..weights import GradientObjective, all_objectives, combination_name
from .data import SyntheticDatasetSpec, generate_dataset, split_dataset

log = logging.getLogger(__name__)

__all__ = ["run_single", "run_grid", "GridCell", "GridReport"]


@lru_cache(maxsize=8)
def _split(spec: SyntheticDatasetSpec):
    return split_dataset(generate_dataset(spec), spec)


def run_single(spec: SyntheticDatasetSpec, config: TrainConfig) -> RunRecord:
    """Generate (cached) data, initialise from ``config.seed`` and train."""
    ds = _split(spec)
    model = init_model(config.dim, spec.d_img, spec.d_txt, config.seed)
    return train(model, ds, config)


def _run_cell(args) -> RunRecord:
    spec, config = args
    try:
        return run_single(spec, config)
    except Exception as exc:  # a failing cell must not abort the grid
        log.exception("run %s seed %d failed", config.objective.label, config.seed)
        return RunRecord(
            config=config.to_dict(), dataset=spec.to_dict(), seed=config.seed,
            status="failed", error=f"{type(exc).__name__}: {exc}",
        )


@dataclass(frozen=True)
class GridCell:
    objective: GradientObjective
    records: tuple

    @property
    def name(self) -> str:
        return combination_name(self.objective)

    @property
    def completed(self) -> list:
        return [r for r in self.records if r.status == "completed"]

    def r1(self, direction: str) -> np.ndarray:
        return np.array([r.final[direction]["r1"] for r in self.completed], dtype=np.float64)

    def stats(self, direction: str) -> tuple[float, float]:
        """Mean and population standard deviation of final R@1."""
        v = self.r1(direction)
        if v.size == 0:
            return float("nan"), float("nan")
        return float(np.mean(v)), float(np.std(v))


CSV_FIELDS = [
    "triplet_weight", "pair_weight", "name", "runs", "failed",
    "r1_i2t_mean", "r1_i2t_std", "r1_t2i_mean", "r1_t2i_std",
]


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6f}"


def _write_csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass(frozen=True)
class GridReport:
    cells: tuple

    @property
    def records(self) -> list:
        return [r for c in self.cells for r in c.records]

    @property
    def all_completed(self) -> bool:
        return all(r.status == "completed" for r in self.records)

    def cell(self, triplet: str, pair: str) -> GridCell:
        for c in self.cells:
            if c.objective.key == (triplet, pair):
                return c
        raise KeyError((triplet, pair))

    def rows(self) -> list[list[str]]:
        out = []
        for c in self.cells:
            i_mean, i_std = c.stats("i2t")
            t_mean, t_std = c.stats("t2i")
            out.append([
                c.objective.triplet.key, c.objective.pair.key, c.name,
                str(len(c.records)), str(len(c.records) - len(c.completed)),
                _fmt(i_mean), _fmt(i_std), _fmt(t_mean), _fmt(t_std),
            ])
        return out

    def to_csv(self) -> str:
        """Long format: one row per combination."""
        return _write_csv(self.rows(), CSV_FIELDS)

    def to_pivot_csv(self) -> str:
        """Pair weights as rows, triplet weights as columns, cells ``mean+-std``."""
        triplets = list(dict.fromkeys(c.objective.triplet.key for c in self.cells))
        pairs = list(dict.fromkeys(c.objective.pair.key for c in self.cells))
        header = ["pair_weight"] + [f"T^{t} {d} R@1" for t in triplets for d in ("i2t", "t2i")]
        rows = []
        for p in pairs:
            row = [f"P^{p}"]
            for t in triplets:
                c = self.cell(t, p)
                for d in ("i2t", "t2i"):
                    mean, std = c.stats(d)
                    row.append(f"{_fmt(mean)}+-{_fmt(std)}")
            rows.append(row)
        return _write_csv(rows, header)


def run_grid(
    spec: SyntheticDatasetSpec,
    template: TrainConfig,
    seeds,
    weight_params: dict | None = None,
    objectives=None,
    workers: int = 1,
) -> GridReport:
    """Train every combination for every seed and aggregate R@1.

    ``template`` supplies everything but the objective and seed.  Cells are
    reduced in registry order whatever order the workers finish in.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    objectives = list(objectives) if objectives is not None else all_objectives(weight_params)
    tasks = [
        (spec, replace(template, objective=obj, seed=int(seed)))
        for obj in objectives
        for seed in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, tasks))
    else:
        records = [_run_cell(t) for t in tasks]

    cells = []
    for i, obj in enumerate(objectives):
        chunk = records[i * len(seeds):(i + 1) * len(seeds)]
        cells.append(GridCell(obj, tuple(chunk)))
    return GridReport(tuple(cells))
