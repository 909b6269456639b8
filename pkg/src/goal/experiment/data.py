"""Synthetic bimodal concept data with a per-concept held-out split."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..mining import l2_normalize

__all__ = ["SyntheticDatasetSpec", "PairedData", "SplitDataset", "generate_dataset", "split_dataset"]


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    concepts: int = 32
    samples_per_concept: int = 10
    d_img: int = 32
    d_txt: int = 24
    noise_sigma: float = 0.05
    seed: int = 0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.concepts < 2:
            raise ValueError(f"need at least 2 concepts, got {self.concepts}")
        if self.samples_per_concept < 1:
            raise ValueError("samples_per_concept must be positive")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.d_img < 1 or self.d_txt < 1:
            raise ValueError("ambient dimensions must be positive")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PairedData:
    """Row ``i`` of ``images`` and ``texts`` is a ground-truth pair."""

    images: np.ndarray
    texts: np.ndarray
    concept_ids: np.ndarray
    image_prototypes: np.ndarray | None = None
    text_prototypes: np.ndarray | None = None

    def __len__(self):
        return len(self.concept_ids)

    def subset(self, idx) -> "PairedData":
        return PairedData(self.images[idx], self.texts[idx], self.concept_ids[idx],
                          self.image_prototypes, self.text_prototypes)


@dataclass(frozen=True)
class SplitDataset:
    train: PairedData
    test: PairedData
    spec_dict: dict


def _prototypes(rng, k, d):
    while True:
        p = l2_normalize(rng.standard_normal((k, d)))
        # distinctness is practically certain; guard against the degenerate draw
        if len(np.unique(np.round(p, 12), axis=0)) == k:
            return p


def generate_dataset(spec: SyntheticDatasetSpec) -> PairedData:
    """Unit-norm prototypes per concept and modality plus isotropic Gaussian noise.

    Samples are laid out concept-major: concept ``c`` owns rows
    ``c * samples_per_concept ... (c + 1) * samples_per_concept - 1``.
    """
    rng = np.random.default_rng(spec.seed)
    p_img = _prototypes(rng, spec.concepts, spec.d_img)
    p_txt = _prototypes(rng, spec.concepts, spec.d_txt)
    ids = np.repeat(np.arange(spec.concepts), spec.samples_per_concept)
    images = p_img[ids] + spec.noise_sigma * rng.standard_normal((len(ids), spec.d_img))
    texts = p_txt[ids] + spec.noise_sigma * rng.standard_normal((len(ids), spec.d_txt))
    return PairedData(images, texts, ids, p_img, p_txt)


def split_dataset(data: PairedData, spec: SyntheticDatasetSpec) -> SplitDataset:
    """Hold out ``test_fraction`` of the pairs of every concept (at least one)."""
    rng = np.random.default_rng([spec.seed, 1])
    test = []
    for c in np.unique(data.concept_ids):
        members = np.flatnonzero(data.concept_ids == c)
        n_test = int(round(spec.test_fraction * len(members)))
        if spec.test_fraction > 0 and len(members) > 1:
            n_test = min(max(n_test, 1), len(members) - 1)
        test.extend(rng.permutation(members)[:n_test].tolist())
    test = np.sort(np.asarray(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(data)), test)
    return SplitDataset(data.subset(train), data.subset(test), spec.to_dict())


def nearest_prototype_accuracy(data: PairedData) -> tuple[float, float]:
    """Fraction of samples whose nearest prototype (Euclidean) is their own concept."""
    out = []
    for samples, protos in ((data.images, data.image_prototypes), (data.texts, data.text_prototypes)):
        d2 = ((samples[:, None, :] - protos[None, :, :]) ** 2).sum(-1)
        out.append(float(np.mean(np.argmin(d2, axis=1) == data.concept_ids)))
    return out[0], out[1]
