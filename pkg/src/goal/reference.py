"""Reference losses and the finite-difference oracle.

For the integrable combinations the assembled gradient must equal the
derivative of an ordinary loss.  Mining is frozen inside the oracle: the
hard negatives mined on the unperturbed batch are reused for every
perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OracleError
from .gradient import BatchGradient, batch_gradient
from .mining import EmbeddingBatch, MinedTripletSet, l2_normalize, mine_hard_negatives, similarity_matrix
from .weights import GradientObjective, PairCon, PairSig, TripletCon, TripletNca

__all__ = [
    "triplet_similarities",
    "hinge_arguments",
    "triplet_loss",
    "nt_xent_loss",
    "sigmoid_pair_loss",
    "fd_gradient",
    "relative_error",
    "random_unit_batch",
    "Certificate",
    "CertificateResult",
    "default_certificates",
    "run_certificate",
]

DEFAULT_H = 1e-5
BOUNDARY_BAND = 1e-3


def triplet_similarities(batch: EmbeddingBatch, mined: MinedTripletSet):
    """``(s_pos, s_neg)`` for all 2N triplets, image anchors first.

    Computed from raw dot products, so perturbed (non-unit) embeddings are
    treated as plain coordinates.
    """
    x, y = batch.x, batch.y
    pos = np.einsum("ij,ij->i", x, y)
    neg_img = np.einsum("ij,ij->i", x, y[mined.hard_neg_text])
    neg_txt = np.einsum("ij,ij->i", x[mined.hard_neg_image], y)
    return np.concatenate([pos, pos]), np.concatenate([neg_img, neg_txt])


def hinge_arguments(batch, mined, margin):
    s_pos, s_neg = triplet_similarities(batch, mined)
    return margin + s_neg - s_pos


def triplet_loss(batch, mined, margin=0.2) -> float:
    """Hinge triplet loss with hard negatives, summed over both families."""
    return float(np.sum(np.maximum(hinge_arguments(batch, mined, margin), 0.0)))


def nt_xent_loss(batch, mined, scale=10.0) -> float:
    """Hard-negative NT-Xent: ``-log softmax`` of the positive against one negative."""
    s_pos, s_neg = triplet_similarities(batch, mined)
    a = scale * s_pos
    b = scale * s_neg
    return float(np.sum(np.logaddexp(a, b) - a))


def sigmoid_pair_loss(batch, mined, alpha=2.0, beta=10.0, lam=0.5, margin=None) -> float:
    """Loss whose similarity derivatives are ``-P+^sig`` and ``+P-^sig``.

    Per triplet: ``softplus(-alpha (s_pos - lam)) / alpha
    + softplus(beta (s_neg - lam)) / beta``.  With ``margin`` set, each
    triplet's term is gated by the hinge indicator, which makes the
    gradient match the (constant triplet, sigmoid pair) combination away
    from the hinge boundary.
    """
    s_pos, s_neg = triplet_similarities(batch, mined)
    terms = (
        np.logaddexp(0.0, -alpha * (s_pos - lam)) / alpha
        + np.logaddexp(0.0, beta * (s_neg - lam)) / beta
    )
    if margin is not None:
        terms = np.where(margin + s_neg - s_pos > 0, terms, 0.0)
    return float(np.sum(terms))


def _central_difference(f, arr, h, out):
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        up = f()
        arr[idx] = orig - h
        down = f()
        arr[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise OracleError(f"non-finite loss while perturbing coordinate {idx}")
        out[idx] = (up - down) / (2.0 * h)


def fd_gradient(
    loss_evaluator: Callable[[EmbeddingBatch], float],
    batch: EmbeddingBatch,
    h: float = DEFAULT_H,
) -> BatchGradient:
    """Central-difference gradient of ``loss_evaluator`` w.r.t. every coordinate.

    Perturbed embeddings are not re-normalized.  ``loss_evaluator`` must
    close over any mining result it needs (frozen mining).
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = batch.x.copy()
    y = batch.y.copy()
    ids = batch.concept_ids

    def f():
        return float(loss_evaluator(EmbeddingBatch(x, y, ids)))

    if not np.isfinite(f()):
        raise OracleError("loss is non-finite at the unperturbed batch")
    gx = np.empty_like(x)
    gy = np.empty_like(y)
    _central_difference(f, x, h, gx)
    _central_difference(f, y, h, gy)
    return BatchGradient(gx, gy)


def relative_error(got: BatchGradient, want: BatchGradient) -> float:
    """Max-abs deviation scaled by the max-abs entry of ``want``."""
    diff = max(
        np.max(np.abs(got.grad_x - want.grad_x)),
        np.max(np.abs(got.grad_y - want.grad_y)),
    )
    scale = max(np.max(np.abs(want.grad_x)), np.max(np.abs(want.grad_y)))
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def random_unit_batch(rng: np.random.Generator, n: int = 16, dim: int = 8, concept_ids=None):
    x = l2_normalize(rng.standard_normal((n, dim)))
    y = l2_normalize(rng.standard_normal((n, dim)))
    if concept_ids is None:
        concept_ids = np.arange(n)
    return EmbeddingBatch(x, y, concept_ids)


# --------------------------------------------------------------------------
# Equivalence certificates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    """An integrable combination paired with a loss whose gradient it must equal.

    ``loss_scale`` multiplies the loss before differencing; NT-Xent's
    similarity derivatives carry an extra factor ``scale`` relative to the
    NCA triplet weight, so its certificate divides it back out.
    ``hinge_margin`` marks certificates whose loss has a kink at the margin.
    """

    name: str
    objective: GradientObjective
    loss: Callable[[EmbeddingBatch, MinedTripletSet], float]
    loss_scale: float = 1.0
    hinge_margin: float | None = None


@dataclass(frozen=True)
class CertificateResult:
    name: str
    objective: str
    batches: int
    resampled: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def default_certificates(margin=0.2, scale=10.0, alpha=2.0, beta=10.0, lam=0.5):
    """The three certified combinations: triplet, NT-Xent and sigmoid-pair."""
    return [
        Certificate(
            "triplet",
            GradientObjective(TripletCon(margin), PairCon()),
            lambda b, m: triplet_loss(b, m, margin),
            hinge_margin=margin,
        ),
        Certificate(
            "nt-xent",
            GradientObjective(TripletNca(scale), PairCon()),
            lambda b, m: nt_xent_loss(b, m, scale),
            loss_scale=1.0 / scale,
        ),
        Certificate(
            "sigmoid-pair",
            GradientObjective(TripletCon(margin), PairSig(alpha, beta, lam)),
            lambda b, m: sigmoid_pair_loss(b, m, alpha, beta, lam, margin=margin),
            hinge_margin=margin,
        ),
    ]


def run_certificate(
    cert: Certificate,
    n_batches: int = 100,
    n: int = 16,
    dim: int = 8,
    seed: int = 0,
    h: float = DEFAULT_H,
    band: float = BOUNDARY_BAND,
    tolerance: float = 1e-5,
) -> CertificateResult:
    """Compare assembled and finite-difference gradients on random batches.

    Batches with any triplet within ``band`` of the hinge boundary are
    redrawn (they do not count towards ``n_batches``).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = resampled = 0
    while done < n_batches:
        batch = random_unit_batch(rng, n, dim)
        mined = mine_hard_negatives(similarity_matrix(batch), batch.concept_ids)
        if cert.hinge_margin is not None:
            if np.any(np.abs(hinge_arguments(batch, mined, cert.hinge_margin)) < band):
                resampled += 1
                continue
        got = batch_gradient(cert.objective, batch, mined)
        want = fd_gradient(lambda b: cert.loss_scale * cert.loss(b, mined), batch, h)
        worst = max(worst, relative_error(got, want))
        done += 1
    return CertificateResult(
        name=cert.name,
        objective=cert.objective.label,
        batches=done,
        resampled=resampled,
        max_rel_error=worst,
        tolerance=tolerance,
    )
