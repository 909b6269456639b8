"""Recall@K over a paired retrieval pool."""

from __future__ import annotations

import numpy as np

from ..errors import EvalError
from ..mining import similarity_matrix

__all__ = ["DIRECTIONS", "recall_at_k", "recall_table", "evaluate_model"]

DIRECTIONS = ("i2t", "t2i")
KS = (1, 5, 10)


def _ranked(s):
    # stable sort on negated scores keeps the lowest index first among ties
    return np.argsort(-s, axis=1, kind="stable")


def recall_at_k(s, concept_ids, k: int, direction: str = "i2t") -> float:
    """Fraction of queries with a same-concept item among their top ``k``.

    ``s[i, j]`` scores image ``i`` against text ``j``; ``i2t`` queries rows,
    ``t2i`` queries columns.
    """
    if direction not in DIRECTIONS:
        raise EvalError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    s = np.asarray(s, dtype=np.float64)
    if direction == "t2i":
        s = s.T
    if k < 1 or k > s.shape[1]:
        raise EvalError(f"k={k} outside [1, {s.shape[1]}]")
    ids = np.asarray(concept_ids)
    top = _ranked(s)[:, :k]
    hits = np.any(ids[top] == ids[:, None], axis=1)
    return float(hits.mean())


def recall_table(s, concept_ids, ks=KS) -> dict:
    return {
        d: {f"r{k}": recall_at_k(s, concept_ids, k, d) for k in ks}
        for d in DIRECTIONS
    }


def evaluate_model(model, data, ks=KS) -> dict:
    from ..trainer import forward

    batch = forward(model, data.images, data.texts, data.concept_ids)
    ks = tuple(k for k in ks if k <= len(data)) or (1,)
    return recall_table(similarity_matrix(batch), batch.concept_ids, ks)
