"""Direct assembly of per-embedding gradients from triplet and pair weights.

No loss is differentiated here.  For every triplet the scalar derivative of
the (possibly non-existent) loss w.r.t. the positive similarity is
``-T * P+`` and w.r.t. the negative similarity ``+T * P-``; the embedding
gradients follow because ``d(x . y)/dx = y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, NormalizationError
from .mining import EmbeddingBatch, MinedTripletSet, relative_masks, similarity_matrix
from .weights import (
    EMPTY,
    GradientObjective,
    RelativeSimilarities,
    negative_weight,
    pair_weight_negative,
    pair_weight_positive,
    positive_weight,
    triplet_weight,
)

__all__ = [
    "BatchGradient",
    "triplet_gradient",
    "family_coefficients",
    "similarity_gradient",
    "batch_gradient",
    "project_through_normalization",
]


@dataclass(frozen=True)
class BatchGradient:
    """Gradients w.r.t. the normalized embeddings, shaped like the batch."""

    grad_x: np.ndarray
    grad_y: np.ndarray

    def check_finite(self) -> None:
        if not (np.all(np.isfinite(self.grad_x)) and np.all(np.isfinite(self.grad_y))):
            raise DivergenceError("non-finite embedding gradient")

    def scaled(self, c: float) -> "BatchGradient":
        return BatchGradient(c * self.grad_x, c * self.grad_y)


def triplet_gradient(
    obj: GradientObjective,
    x,
    y,
    y_neg,
    rel: RelativeSimilarities = EMPTY,
):
    """Contributions of one triplet ``(x, y, y_neg)`` to the three gradients.

    Returns ``(g_x, g_y, g_y_neg)`` with

        g_x     = -T P+ y + T P- y_neg
        g_y     = -T P+ x
        g_y_neg = +T P- x
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    y_neg = np.asarray(y_neg, dtype=np.float64)
    s_pos = float(x @ y)
    s_neg = float(x @ y_neg)
    t = triplet_weight(obj.triplet, s_pos, s_neg)
    c_pos = t * pair_weight_positive(obj.pair, s_pos, rel)
    c_neg = t * pair_weight_negative(obj.pair, s_neg, rel)
    return -c_pos * y + c_neg * y_neg, -c_pos * x, c_neg * x


def _masked_mean(values, mask, empty):
    count = mask.sum(axis=1)
    total = np.where(mask, values, 0.0).sum(axis=1)
    return np.where(count > 0, total / np.maximum(count, 1), empty)


def family_coefficients(obj: GradientObjective, s, concept_ids, mined_neg):
    """Per-anchor ``(T * P+, T * P-)`` for the row anchors of ``s``.

    Anchor ``i``'s positive is column ``i`` and its hard negative column
    ``mined_neg[i]``.  Call with ``s.T`` for the text-anchor family.
    """
    s = np.asarray(s, dtype=np.float64)
    rows = np.arange(s.shape[0])
    s_pos = s[rows, rows]
    s_neg = s[rows, mined_neg]
    t = triplet_weight(obj.triplet, s_pos, s_neg)

    if obj.uses_relatives:
        p_mask, n_mask = relative_masks(s, concept_ids, mined_neg, obj.eps)
        alpha = getattr(obj.pair, "alpha", 1.0)
        beta = getattr(obj.pair, "beta", 1.0)
        gap_pos = s_pos[:, None] - s
        gap_neg = s_neg[:, None] - s
        with np.errstate(over="ignore"):
            m_sig_pos = _masked_mean(np.exp(alpha * gap_pos), p_mask, 1.0)
            m_sig_neg = _masked_mean(np.exp(-beta * gap_neg), n_mask, 1.0)
        m_lin_pos = _masked_mean(gap_pos, p_mask, 0.0)
        m_lin_neg = _masked_mean(gap_neg, n_mask, 0.0)
    else:
        m_sig_pos = m_sig_neg = 1.0
        m_lin_pos = m_lin_neg = 0.0

    p_pos = positive_weight(obj.pair, s_pos, m_sig_pos, m_lin_pos)
    p_neg = negative_weight(obj.pair, s_neg, m_sig_neg, m_lin_neg)
    return t * p_pos, t * p_neg


def similarity_gradient(obj: GradientObjective, s, concept_ids, mined: MinedTripletSet):
    """Matrix ``G`` of scalar derivatives w.r.t. every entry of ``s``.

    Image-anchor triplets are accumulated first, then text-anchor triplets,
    each in ascending anchor order.
    """
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    rows = np.arange(n)
    img_pos, img_neg = family_coefficients(obj, s, concept_ids, mined.hard_neg_text)
    txt_pos, txt_neg = family_coefficients(obj, s.T, concept_ids, mined.hard_neg_image)

    g = np.zeros_like(s)
    g[rows, rows] -= img_pos
    np.add.at(g, (rows, mined.hard_neg_text), img_neg)
    g[rows, rows] -= txt_pos
    np.add.at(g, (mined.hard_neg_image, rows), txt_neg)
    return g


def batch_gradient(
    obj: GradientObjective, batch: EmbeddingBatch, mined: MinedTripletSet
) -> BatchGradient:
    """Gradients of both triplet families w.r.t. every embedding in the batch."""
    s = similarity_matrix(batch)
    g = similarity_gradient(obj, s, batch.concept_ids, mined)
    return BatchGradient(grad_x=g @ batch.y, grad_y=g.T @ batch.x)


def project_through_normalization(raw, grad_at_unit):
    """Chain rule through ``v -> v / |v|``, row-wise for 2-D inputs.

    Removes the radial component of ``grad_at_unit`` and divides by the
    norm of ``raw``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    g = np.asarray(grad_at_unit, dtype=np.float64)
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise NormalizationError("cannot project through normalization of a zero vector")
    u = raw / norm
    radial = np.sum(u * g, axis=-1, keepdims=True)
    return (g - u * radial) / norm
