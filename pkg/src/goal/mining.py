"""Batch similarities, hard-negative mining and MS relative-similarity sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MiningError, NormalizationError
from .weights import RelativeSimilarities

__all__ = [
    "EmbeddingBatch",
    "MinedTripletSet",
    "l2_normalize",
    "similarity_matrix",
    "mine_hard_negatives",
    "relative_sets",
    "relative_masks",
]

NORM_TOL = 1e-6


def l2_normalize(v):
    """Scale ``v`` (or each row of a 2-D array) to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    with np.errstate(over="ignore"):
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise NormalizationError("cannot normalize a zero-norm vector")
    if not np.all(np.isfinite(norm)):
        raise NormalizationError("vector norm is not finite")
    return v / norm


@dataclass(frozen=True)
class EmbeddingBatch:
    """Paired image-side ``x`` and text-side ``y`` embeddings.

    Row ``i`` of ``x`` and row ``i`` of ``y`` form a ground-truth pair.  Items
    sharing a concept id are positives of each other.  Unit norm is not
    enforced on construction because the finite-difference oracle perturbs
    embeddings off the sphere; use :meth:`check_normalized` where it matters.
    """

    x: np.ndarray
    y: np.ndarray
    concept_ids: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        ids = np.asarray(self.concept_ids).astype(np.int64)
        if x.ndim != 2 or x.shape != y.shape:
            raise ValueError(f"x and y must be equal-shape 2-D arrays, got {x.shape}, {y.shape}")
        if ids.shape != (x.shape[0],):
            raise ValueError(f"need one concept id per pair, got {ids.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "concept_ids", ids)

    @classmethod
    def from_raw(cls, x_raw, y_raw, concept_ids=None) -> "EmbeddingBatch":
        x = l2_normalize(x_raw)
        y = l2_normalize(y_raw)
        if concept_ids is None:
            concept_ids = np.arange(len(x))
        return cls(x, y, concept_ids)

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def check_normalized(self, tol: float = NORM_TOL) -> None:
        for name, arr in (("x", self.x), ("y", self.y)):
            err = np.max(np.abs(np.linalg.norm(arr, axis=1) - 1.0))
            if err > tol:
                raise NormalizationError(f"{name} rows deviate from unit norm by {err:.3g}")

    def swapped(self) -> "EmbeddingBatch":
        """The same batch with the modalities exchanged."""
        return EmbeddingBatch(self.y, self.x, self.concept_ids)


def similarity_matrix(batch: EmbeddingBatch) -> np.ndarray:
    """``s[i, j] = x_i . y_j``; the diagonal holds ground-truth pair similarities."""
    return batch.x @ batch.y.T


@dataclass(frozen=True)
class MinedTripletSet:
    """Hard negatives for both triplet families.

    ``hard_neg_text[i]`` is the column mined for image anchor ``i`` and
    ``hard_neg_image[j]`` the row mined for text anchor ``j``.
    """

    hard_neg_text: np.ndarray
    hard_neg_image: np.ndarray

    def swapped(self) -> "MinedTripletSet":
        return MinedTripletSet(self.hard_neg_image, self.hard_neg_text)


def _negative_mask(concept_ids) -> np.ndarray:
    ids = np.asarray(concept_ids)
    return ids[:, None] != ids[None, :]


def _argmax_rows(s, mask):
    masked = np.where(mask, s, -np.inf)
    # np.argmax returns the first maximum, so ties go to the lowest index
    return np.argmax(masked, axis=1)


def mine_hard_negatives(s, concept_ids) -> MinedTripletSet:
    """Most similar different-concept candidate for every anchor of both families."""
    s = np.asarray(s, dtype=np.float64)
    neg = _negative_mask(concept_ids)
    if s.shape != neg.shape:
        raise ValueError(f"similarity matrix {s.shape} does not match {len(neg)} concept ids")
    if not np.all(neg.any(axis=1)):
        raise MiningError("every anchor needs at least one different-concept candidate")
    return MinedTripletSet(
        hard_neg_text=_argmax_rows(s, neg),
        hard_neg_image=_argmax_rows(s.T, neg),
    )


def relative_masks(s, concept_ids, mined_neg, eps: float):
    """Admission masks of the relative sets for every row anchor of ``s``.

    Row ``i`` is an anchor whose selected positive is column ``i`` and whose
    mined negative is column ``mined_neg[i]``.  Returns boolean ``(P, N)``
    arrays of the same shape as ``s``.  Text anchors are handled by passing
    ``s.T`` with the image-side mined indices.
    """
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    neg = _negative_mask(concept_ids)
    pos = ~neg
    rows = np.arange(n)
    mined_neg = np.asarray(mined_neg)

    max_neg = np.where(neg, s, -np.inf).max(axis=1, keepdims=True)
    min_pos = np.where(pos, s, np.inf).min(axis=1, keepdims=True)

    cand_pos = pos.copy()
    cand_pos[rows, rows] = False
    cand_neg = neg.copy()
    cand_neg[rows, mined_neg] = False

    p_mask = cand_pos & (s < max_neg + eps)
    n_mask = cand_neg & (s > min_pos - eps)
    return p_mask, n_mask


def relative_sets(s, concept_ids, anchor: int, selected_pos: int, mined_neg: int, eps: float):
    """Relative similarities admitted for one row anchor of ``s``.

    The positive set keeps other positives below (max negative similarity
    + eps); the negative set keeps other negatives above (min positive
    similarity - eps).  Max and min range over all of the anchor's
    candidates, the selected pair and mined negative included.
    """
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    row = np.asarray(s, dtype=np.float64)[anchor]
    ids = np.asarray(concept_ids)
    same = ids == ids[anchor]
    max_neg = row[~same].max() if np.any(~same) else -np.inf
    min_pos = row[same].min()

    positives = [
        row[j] for j in range(len(row))
        if same[j] and j != selected_pos and row[j] < max_neg + eps
    ]
    negatives = [
        row[j] for j in range(len(row))
        if not same[j] and j != mined_neg and row[j] > min_pos - eps
    ]
    return RelativeSimilarities(positives, negatives)
