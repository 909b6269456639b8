"""Triplet weights, pair weights and the combination registry.

Every function here is elementwise: scalars in, scalars out; arrays in,
arrays out.  Similarities are cosine similarities in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import ClassVar, Sequence, Union

import numpy as np

__all__ = [
    "TripletCon",
    "TripletNca",
    "TripletCir",
    "PairCon",
    "PairLin",
    "PairSig",
    "PairSigMs",
    "PairLinMs",
    "TripletWeightKind",
    "PairWeightKind",
    "GradientObjective",
    "RelativeSimilarities",
    "TRIPLET_KINDS",
    "PAIR_KINDS",
    "triplet_weight",
    "pair_weight_positive",
    "pair_weight_negative",
    "positive_weight",
    "negative_weight",
    "relative_terms_positive",
    "relative_terms_negative",
    "combination_name",
    "make_objective",
    "all_objectives",
]


def _check(cond, msg):
    if not cond:
        raise ValueError(msg)


# --------------------------------------------------------------------------
# Triplet weight kinds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TripletCon:
    """Hinge gate: 1 while the margin is violated, else 0."""

    margin: float = 0.2
    key: ClassVar[str] = "con"

    def __post_init__(self):
        _check(0.0 <= self.margin <= 2.0, f"margin must lie in [0, 2], got {self.margin}")


@dataclass(frozen=True)
class TripletNca:
    """Softmax weight over the (positive, hard negative) pair."""

    scale: float = 10.0
    key: ClassVar[str] = "nca"

    def __post_init__(self):
        _check(self.scale > 0, f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class TripletCir:
    """Circle weight; constant on circles centred at (s_pos, s_neg) = (1, 0)."""

    scale: float = 10.0
    key: ClassVar[str] = "cir"

    def __post_init__(self):
        _check(self.scale > 0, f"scale must be positive, got {self.scale}")


# --------------------------------------------------------------------------
# Pair weight kinds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PairCon:
    key: ClassVar[str] = "con"


@dataclass(frozen=True)
class PairLin:
    key: ClassVar[str] = "lin"


def _check_sigmoid(alpha, beta, lam):
    _check(alpha > 0, f"alpha must be positive, got {alpha}")
    _check(beta > 0, f"beta must be positive, got {beta}")
    _check(-1.0 <= lam <= 1.0, f"lam must lie in [-1, 1], got {lam}")


@dataclass(frozen=True)
class PairSig:
    alpha: float = 2.0
    beta: float = 10.0
    lam: float = 0.5
    key: ClassVar[str] = "sig"

    def __post_init__(self):
        _check_sigmoid(self.alpha, self.beta, self.lam)


@dataclass(frozen=True)
class PairSigMs:
    """Sigmoid pair weight rescaled by the anchor's relative similarities."""

    alpha: float = 2.0
    beta: float = 10.0
    lam: float = 0.5
    eps: float = 0.1
    key: ClassVar[str] = "sig-ms"

    def __post_init__(self):
        _check_sigmoid(self.alpha, self.beta, self.lam)
        _check(self.eps >= 0, f"eps must be non-negative, got {self.eps}")


@dataclass(frozen=True)
class PairLinMs:
    """Linear pair weight rescaled by the mean relative similarity gap."""

    eps: float = 0.1
    key: ClassVar[str] = "lin-ms"

    def __post_init__(self):
        _check(self.eps >= 0, f"eps must be non-negative, got {self.eps}")


TripletWeightKind = Union[TripletCon, TripletNca, TripletCir]
PairWeightKind = Union[PairCon, PairLin, PairSig, PairSigMs, PairLinMs]

TRIPLET_KINDS: dict[str, type] = {k.key: k for k in (TripletCon, TripletNca, TripletCir)}
PAIR_KINDS: dict[str, type] = {
    k.key: k for k in (PairCon, PairLin, PairSig, PairSigMs, PairLinMs)
}


@dataclass(frozen=True)
class RelativeSimilarities:
    """Similarities of an anchor's *other* positives and negatives.

    Both lists are already filtered by the admission rules in
    :func:`goal.mining.relative_sets` and never contain the selected
    positive or the mined hard negative.
    """

    positives: tuple = ()
    negatives: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "positives", tuple(float(v) for v in self.positives))
        object.__setattr__(self, "negatives", tuple(float(v) for v in self.negatives))


EMPTY = RelativeSimilarities()


@dataclass(frozen=True)
class GradientObjective:
    """One point of the 3 x 5 (triplet weight, pair weight) grid."""

    triplet: TripletWeightKind = field(default_factory=TripletCon)
    pair: PairWeightKind = field(default_factory=PairCon)

    def __post_init__(self):
        if not isinstance(self.triplet, tuple(TRIPLET_KINDS.values())):
            raise TypeError(f"not a triplet weight kind: {self.triplet!r}")
        if not isinstance(self.pair, tuple(PAIR_KINDS.values())):
            raise TypeError(f"not a pair weight kind: {self.pair!r}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.triplet.key, self.pair.key)

    @property
    def label(self) -> str:
        return f"T^{self.triplet.key}+P^{self.pair.key}"

    @property
    def uses_relatives(self) -> bool:
        return isinstance(self.pair, (PairSigMs, PairLinMs))

    @property
    def eps(self) -> float:
        return getattr(self.pair, "eps", 0.0)

    def to_dict(self) -> dict:
        return {
            "triplet": {"kind": self.triplet.key, **_params(self.triplet)},
            "pair": {"kind": self.pair.key, **_params(self.pair)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GradientObjective":
        t = dict(d["triplet"])
        p = dict(d["pair"])
        return make_objective(t.pop("kind"), p.pop("kind"), triplet_params=t, pair_params=p)


def _params(kind) -> dict:
    return {f.name: getattr(kind, f.name) for f in fields(kind)}


# --------------------------------------------------------------------------
# Weight functions
# --------------------------------------------------------------------------


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def _recip(m, z):
    """1 / (m + exp(z)), saturating to 0 when exp overflows."""
    with np.errstate(over="ignore"):
        return 1.0 / (m + np.exp(z))


def triplet_weight(kind: TripletWeightKind, s_pos, s_neg):
    s_pos = np.asarray(s_pos, dtype=np.float64)
    s_neg = np.asarray(s_neg, dtype=np.float64)
    if isinstance(kind, TripletCon):
        # strict inequality: an exactly-satisfied margin is inactive
        return _out(np.where(kind.margin + s_neg - s_pos > 0, 1.0, 0.0))
    if isinstance(kind, TripletNca):
        return _out(_recip(1.0, kind.scale * (s_pos - s_neg)))
    if isinstance(kind, TripletCir):
        return _out(_recip(1.0, kind.scale * (s_pos * (2.0 - s_pos) - s_neg * s_neg)))
    raise TypeError(f"not a triplet weight kind: {kind!r}")


def relative_terms_positive(kind: PairWeightKind, s_pos: float, relatives: Sequence[float]):
    """Return ``(m_sig, m_lin)`` for a selected positive; (1, 0) when empty."""
    r = np.asarray(relatives, dtype=np.float64)
    if r.size == 0:
        return 1.0, 0.0
    alpha = getattr(kind, "alpha", 1.0)
    with np.errstate(over="ignore"):
        m_sig = float(np.mean(np.exp(alpha * (s_pos - r))))
    m_lin = float(np.mean(s_pos - r))
    return m_sig, m_lin


def relative_terms_negative(kind: PairWeightKind, s_neg: float, relatives: Sequence[float]):
    """Return ``(m_sig, m_lin)`` for a mined negative; (1, 0) when empty."""
    r = np.asarray(relatives, dtype=np.float64)
    if r.size == 0:
        return 1.0, 0.0
    beta = getattr(kind, "beta", 1.0)
    with np.errstate(over="ignore"):
        m_sig = float(np.mean(np.exp(-beta * (s_neg - r))))
    m_lin = float(np.mean(s_neg - r))
    return m_sig, m_lin


def positive_weight(kind: PairWeightKind, s_pos, m_sig=1.0, m_lin=0.0):
    """Positive pair weight given precomputed relative terms.

    ``m_sig`` and ``m_lin`` are ignored by the non-MS kinds.  Vectorised
    callers (batch gradient assembly) pass arrays for all three.
    """
    s_pos = np.asarray(s_pos, dtype=np.float64)
    if isinstance(kind, PairCon):
        w = np.ones_like(s_pos)
    elif isinstance(kind, PairLin):
        w = 1.0 - s_pos
    elif isinstance(kind, PairSig):
        w = _recip(1.0, kind.alpha * (s_pos - kind.lam))
    elif isinstance(kind, PairSigMs):
        w = _recip(m_sig, kind.alpha * (s_pos - kind.lam))
    elif isinstance(kind, PairLinMs):
        w = (1.0 - np.asarray(m_lin, dtype=np.float64)) * (1.0 - s_pos)
    else:
        raise TypeError(f"not a pair weight kind: {kind!r}")
    return _out(np.maximum(w, 0.0))


def negative_weight(kind: PairWeightKind, s_neg, m_sig=1.0, m_lin=0.0):
    """Negative pair weight given precomputed relative terms (see above)."""
    s_neg = np.asarray(s_neg, dtype=np.float64)
    if isinstance(kind, PairCon):
        w = np.ones_like(s_neg)
    elif isinstance(kind, PairLin):
        w = s_neg
    elif isinstance(kind, PairSig):
        w = _recip(1.0, -kind.beta * (s_neg - kind.lam))
    elif isinstance(kind, PairSigMs):
        w = _recip(m_sig, -kind.beta * (s_neg - kind.lam))
    elif isinstance(kind, PairLinMs):
        w = (1.0 + np.asarray(m_lin, dtype=np.float64)) * s_neg
    else:
        raise TypeError(f"not a pair weight kind: {kind!r}")
    # a negative weight would turn repulsion into attraction
    return _out(np.maximum(w, 0.0))


def pair_weight_positive(kind: PairWeightKind, s_pos, rel: RelativeSimilarities = EMPTY):
    m_sig, m_lin = relative_terms_positive(kind, s_pos, rel.positives)
    return positive_weight(kind, s_pos, m_sig, m_lin)


def pair_weight_negative(kind: PairWeightKind, s_neg, rel: RelativeSimilarities = EMPTY):
    m_sig, m_lin = relative_terms_negative(kind, s_neg, rel.negatives)
    return negative_weight(kind, s_neg, m_sig, m_lin)


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------

NEW = "New"

_KNOWN_LOSSES = {
    ("con", "con"): "triplet loss",
    ("nca", "con"): "NT-Xent/NCA",
    ("con", "sig-ms"): "MS loss",
    ("cir", "lin"): "circle loss",
}


def combination_name(obj: GradientObjective) -> str:
    """Established loss name for a combination, or ``"New"``."""
    return _KNOWN_LOSSES.get(obj.key, NEW)


def make_objective(
    triplet: str,
    pair: str,
    triplet_params: dict | None = None,
    pair_params: dict | None = None,
) -> GradientObjective:
    """Build an objective from registry keys, e.g. ``("cir", "sig-ms")``."""
    try:
        t_cls = TRIPLET_KINDS[triplet]
        p_cls = PAIR_KINDS[pair]
    except KeyError as exc:
        raise ValueError(f"unknown weight kind {exc.args[0]!r}") from None
    return GradientObjective(t_cls(**(triplet_params or {})), p_cls(**(pair_params or {})))


def all_objectives(hyper: dict | None = None) -> list[GradientObjective]:
    """All 15 combinations, triplet-major in registry order.

    ``hyper`` maps parameter names (margin, scale, alpha, beta, lam, eps)
    to overrides; each kind picks up only the names it declares.
    """
    hyper = hyper or {}
    out = []
    for t_cls in TRIPLET_KINDS.values():
        t = t_cls(**{f.name: hyper[f.name] for f in fields(t_cls) if f.name in hyper})
        for p_cls in PAIR_KINDS.values():
            p = p_cls(**{f.name: hyper[f.name] for f in fields(p_cls) if f.name in hyper})
            out.append(GradientObjective(t, p))
    return out
