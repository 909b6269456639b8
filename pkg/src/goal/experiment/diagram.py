"""Tabulated weight diagrams over the displayed similarity square [0, 1]^2."""

from __future__ import annotations

import csv
import io

import numpy as np

from ..weights import (
    PAIR_KINDS,
    TRIPLET_KINDS,
    negative_weight,
    positive_weight,
    triplet_weight,
)

__all__ = ["triplet_diagram", "pair_diagram", "emit_weight_diagram", "diagram_csv"]


def _axis(resolution: int) -> np.ndarray:
    if resolution < 2:
        raise ValueError(f"resolution must be at least 2, got {resolution}")
    return np.linspace(0.0, 1.0, resolution)


def triplet_diagram(kind, resolution: int = 101):
    """Rows ``(s_pos, s_neg, weight)``, s_pos-major."""
    axis = _axis(resolution)
    sp, sn = np.meshgrid(axis, axis, indexing="ij")
    w = triplet_weight(kind, sp, sn)
    return np.column_stack([sp.ravel(), sn.ravel(), np.ravel(w)])


def pair_diagram(kind, resolution: int = 101, m_sig: float = 1.0, m_lin: float = 0.0):
    """Rows ``(s_pos, s_neg, weight)`` for both pair weights.

    Pair weights depend on a single similarity, so the grid is laid out as
    in the triplet case and ``weight`` holds ``P+(s_pos) * P-(s_neg)``; the
    separate factors are the last two columns.  ``m_sig`` / ``m_lin`` fix
    the relative terms of the MS kinds (defaults: empty relative sets).
    """
    axis = _axis(resolution)
    sp, sn = np.meshgrid(axis, axis, indexing="ij")
    wp = positive_weight(kind, sp, m_sig, m_lin)
    wn = negative_weight(kind, sn, m_sig, m_lin)
    wp = np.broadcast_to(wp, sp.shape)
    wn = np.broadcast_to(wn, sn.shape)
    return np.column_stack([sp.ravel(), sn.ravel(), (wp * wn).ravel(), wp.ravel(), wn.ravel()])


def emit_weight_diagram(family: str, key: str, params: dict | None = None,
                        resolution: int = 101, **pair_terms):
    """Dispatch on ``family`` ("triplet" or "pair") and registry ``key``.

    Returns ``(header, rows)``.
    """
    params = params or {}
    if family == "triplet":
        kind = TRIPLET_KINDS[key](**params)
        return ["s_pos", "s_neg", "weight"], triplet_diagram(kind, resolution)
    if family == "pair":
        kind = PAIR_KINDS[key](**params)
        header = ["s_pos", "s_neg", "weight", "weight_pos", "weight_neg"]
        return header, pair_diagram(kind, resolution, **pair_terms)
    raise ValueError(f"family must be 'triplet' or 'pair', got {family!r}")


def diagram_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()
