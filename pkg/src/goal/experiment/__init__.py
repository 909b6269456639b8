"""Synthetic data, retrieval evaluation, grid runner and weight diagrams."""

from .data import SyntheticDatasetSpec, generate_dataset, split_dataset
from .diagram import emit_weight_diagram
from .grid import GridReport, run_grid, run_single
from .retrieval import evaluate_model, recall_at_k

__all__ = [
    "SyntheticDatasetSpec",
    "generate_dataset",
    "split_dataset",
    "emit_weight_diagram",
    "GridReport",
    "run_grid",
    "run_single",
    "evaluate_model",
    "recall_at_k",
]
