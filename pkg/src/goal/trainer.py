"""Two-tower linear model trained by injecting assembled gradients (plain SGD)."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergenceError, MiningError, NormalizationError
from .gradient import BatchGradient, batch_gradient, project_through_normalization
from .mining import EmbeddingBatch, l2_normalize, mine_hard_negatives, similarity_matrix
from .weights import GradientObjective

log = logging.getLogger(__name__)

# independent RNG streams derived from one run seed
INIT_STREAM = 0
SHUFFLE_STREAM = 1

__all__ = [
    "TwoTowerModel",
    "TrainConfig",
    "RunRecord",
    "init_model",
    "forward",
    "weight_gradients",
    "backward_and_step",
    "train_step",
    "loss_proxy",
    "split_loss_proxy",
    "train",
]


@dataclass(frozen=True)
class TwoTowerModel:
    """One bias-free linear map per modality into a shared ``dim``-space."""

    w_img: np.ndarray  # (dim, d_img)
    w_txt: np.ndarray  # (dim, d_txt)

    def __post_init__(self):
        if self.w_img.shape[0] != self.w_txt.shape[0]:
            raise ValueError("towers must share the joint embedding dimension")
        if self.w_img.shape[0] < 2:
            raise ValueError("joint embedding dimension must be at least 2")

    @property
    def dim(self) -> int:
        return self.w_img.shape[0]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.w_img)) and np.all(np.isfinite(self.w_txt)))


def init_model(dim: int, d_img: int, d_txt: int, rng) -> TwoTowerModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.

    ``rng`` is a Generator or an integer run seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng([int(rng), INIT_STREAM])
    b_img = 1.0 / np.sqrt(d_img)
    b_txt = 1.0 / np.sqrt(d_txt)
    return TwoTowerModel(
        w_img=rng.uniform(-b_img, b_img, size=(dim, d_img)),
        w_txt=rng.uniform(-b_txt, b_txt, size=(dim, d_txt)),
    )


def forward(model: TwoTowerModel, images, texts, concept_ids=None) -> EmbeddingBatch:
    images = np.asarray(images, dtype=np.float64)
    texts = np.asarray(texts, dtype=np.float64)
    x = l2_normalize(images @ model.w_img.T)
    y = l2_normalize(texts @ model.w_txt.T)
    if concept_ids is None:
        concept_ids = np.arange(len(x))
    return EmbeddingBatch(x, y, concept_ids)


def weight_gradients(model: TwoTowerModel, images, texts, grad: BatchGradient):
    """Gradients w.r.t. both tower matrices, summed over the batch."""
    images = np.asarray(images, dtype=np.float64)
    texts = np.asarray(texts, dtype=np.float64)
    g_raw_img = project_through_normalization(images @ model.w_img.T, grad.grad_x)
    g_raw_txt = project_through_normalization(texts @ model.w_txt.T, grad.grad_y)
    return g_raw_img.T @ images, g_raw_txt.T @ texts


def backward_and_step(model: TwoTowerModel, images, texts, grad: BatchGradient, lr: float):
    """One SGD update ``W <- W - lr * dW`` for both towers; returns a new model."""
    grad.check_finite()
    g_img, g_txt = weight_gradients(model, images, texts, grad)
    if not (np.all(np.isfinite(g_img)) and np.all(np.isfinite(g_txt))):
        raise DivergenceError("non-finite weight gradient")
    with np.errstate(over="ignore", invalid="ignore"):
        new = TwoTowerModel(model.w_img - lr * g_img, model.w_txt - lr * g_txt)
    if not new.is_finite():
        raise DivergenceError("parameters became non-finite")
    return new


@dataclass(frozen=True)
class TrainConfig:
    objective: GradientObjective = field(default_factory=GradientObjective)
    lr: float = 0.03
    epochs: int = 200
    batch_size: int = 32
    dim: int = 32
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.batch_size < 4:
            raise ValueError(f"batch_size must be at least 4, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objective"] = self.objective.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "objective" in d:
            d["objective"] = GradientObjective.from_dict(d["objective"])
        return cls(**d)


@dataclass
class RunRecord:
    """Outcome of one training run.

    ``duration_s`` is wall-clock and deliberately left out of
    :meth:`to_dict` so serialized records are reproducible byte for byte.
    """

    config: dict
    dataset: dict
    seed: int
    history: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    status: str = "completed"
    failed_epoch: int | None = None
    error: str | None = None
    duration_s: float = 0.0
    model: TwoTowerModel | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "dataset": self.dataset,
            "seed": self.seed,
            "status": self.status,
            "failed_epoch": self.failed_epoch,
            "error": self.error,
            "final": self.final,
            "history": self.history,
        }


def loss_proxy(batch: EmbeddingBatch, mined) -> float:
    """Mean positive similarity minus mean mined-negative similarity."""
    s = similarity_matrix(batch)
    rows = np.arange(len(batch))
    s_pos = s[rows, rows]
    s_neg = np.concatenate([s[rows, mined.hard_neg_text], s[mined.hard_neg_image, rows]])
    return float(s_pos.mean() - s_neg.mean())


def split_loss_proxy(model, data) -> float:
    """Loss proxy of ``model`` on a whole split, mining over all of it.

    Unlike the mean over the epoch's mini-batches this does not depend on
    the shuffle, so successive epochs are directly comparable.
    """
    batch = forward(model, data.images, data.texts, data.concept_ids)
    mined = mine_hard_negatives(similarity_matrix(batch), batch.concept_ids)
    return loss_proxy(batch, mined)


def train_step(model, images, texts, concept_ids, objective, lr):
    """forward -> similarities -> mining -> assembly -> SGD; returns (model, proxy)."""
    try:
        batch = forward(model, images, texts, concept_ids)
    except NormalizationError as exc:
        # weights finite but so large that the projections overflow
        raise DivergenceError(f"forward pass failed: {exc}") from exc
    s = similarity_matrix(batch)
    mined = mine_hard_negatives(s, concept_ids)
    grad = batch_gradient(objective, batch, mined)
    return backward_and_step(model, images, texts, grad, lr), loss_proxy(batch, mined)


def _batches(order, batch_size, concept_ids):
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        # tail batches that are too small or single-concept cannot be mined
        if len(idx) < 4 or len(np.unique(concept_ids[idx])) < 2:
            continue
        yield idx


def train(model: TwoTowerModel, dataset, config: TrainConfig, evaluate=None) -> RunRecord:
    """Train on ``dataset.train``; the final model is kept on ``record.model``.

    ``dataset`` is a :class:`goal.experiment.data.SplitDataset`; ``evaluate``
    maps ``(model, held_out)`` to a metrics dict and defaults to recall on
    the held-out split.
    """
    if evaluate is None:
        from .experiment.retrieval import evaluate_model as evaluate

    start = time.perf_counter()
    rng = np.random.default_rng([config.seed, SHUFFLE_STREAM])
    tr = dataset.train
    record = RunRecord(config=config.to_dict(), dataset=dataset.spec_dict, seed=config.seed)
    if len(np.unique(tr.concept_ids)) < 2:
        raise MiningError("training split needs at least two concepts")

    epoch = 0
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(tr))
            proxies = []
            for idx in _batches(order, config.batch_size, tr.concept_ids):
                model, proxy = train_step(
                    model, tr.images[idx], tr.texts[idx], tr.concept_ids[idx],
                    config.objective, config.lr,
                )
                proxies.append(proxy)
            if epoch % config.eval_every == 0 or epoch == config.epochs:
                metrics = evaluate(model, dataset.test)
                record.history.append({
                    "epoch": epoch,
                    "loss_proxy": split_loss_proxy(model, tr),
                    "batch_loss_proxy": float(np.mean(proxies)) if proxies else None,
                    "r1_i2t": metrics["i2t"]["r1"],
                    "r1_t2i": metrics["t2i"]["r1"],
                })
        record.final = evaluate(model, dataset.test)
    except (DivergenceError, NormalizationError) as exc:
        # an overflowing projection during evaluation is the same failure
        log.warning("run diverged at epoch %s: %s", epoch, exc)
        record.status = "diverged"
        record.failed_epoch = epoch
        record.error = str(exc)
    record.duration_s = time.perf_counter() - start
    record.model = model
    return record
