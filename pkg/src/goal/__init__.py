"""Gradient objectives for two-tower retrieval: train from weighted gradients, not losses."""

from .errors import DivergenceError, EvalError, MiningError, NormalizationError, OracleError
from .gradient import BatchGradient, batch_gradient, project_through_normalization, triplet_gradient
from .mining import EmbeddingBatch, MinedTripletSet, l2_normalize, mine_hard_negatives, relative_sets, similarity_matrix
from .weights import (
    GradientObjective,
    PairCon,
    PairLin,
    PairLinMs,
    PairSig,
    PairSigMs,
    RelativeSimilarities,
    TripletCir,
    TripletCon,
    TripletNca,
    all_objectives,
    combination_name,
    make_objective,
    pair_weight_negative,
    pair_weight_positive,
    triplet_weight,
)

__version__ = "0.1.0"
