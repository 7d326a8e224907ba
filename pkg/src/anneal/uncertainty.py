"""Pair uncertainty scoring for the two selection modes.

Margin-based scoring (mgue) rates a candidate pair by how close its cosine
similarity in the current metric space sits to an adaptive decision
threshold. Classifier-based scoring (bcgue) rates it by how close the pair
classifier's posterior sits to one half. Low score means high uncertainty in
both modes.

The threshold is re-estimated each round from the similarities the current
model assigns to the labeled pairs:

    threshold = (mu_sim + mu_dsim - lam * (sigma_sim - sigma_dsim)) / 2

with population standard deviations (divide by the class count, not count-1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Dataset, LabeledPair, PairKey
from .metric import BinaryClassifier, ConfigError, MetricModel, _cosine_batch, classifier_forward, project, sigmoid

DEFAULT_LAMBDA = 3.0


class NoThresholdError(ValueError):
    """Raised when the labeled set cannot support a threshold estimate."""


@dataclass(frozen=True)
class ThresholdStats:
    """Similarity moments of the labeled set and the threshold they imply."""

    threshold: float
    mu_sim: float
    mu_dsim: float
    sigma_sim: float
    sigma_dsim: float
    n_sim: int
    n_dsim: int
    lam: float


def threshold_from_moments(mu_sim: float, mu_dsim: float, sigma_sim: float,
                           sigma_dsim: float, lam: float = DEFAULT_LAMBDA) -> float:
    if lam < 0:
        raise ConfigError(f"lam must be >= 0, got {lam}")
    return (mu_sim + mu_dsim - lam * (sigma_sim - sigma_dsim)) / 2.0


def estimate_threshold(
    model: MetricModel,
    dataset: Dataset,
    pairs: Sequence[LabeledPair],
    lam: float = DEFAULT_LAMBDA,
    include_transitive: bool = True,
    projected: np.ndarray | None = None,
) -> ThresholdStats:
    """Threshold statistics from the model's view of the labeled pairs.

    ``include_transitive=False`` drops derived labels from the moment
    estimate so only directly annotated pairs steer the threshold. Raises
    :class:`NoThresholdError` unless both label classes are present.
    """
    used = [p for p in pairs if include_transitive or p.provenance != "transitive"]
    n_sim = sum(p.label == 1 for p in used)
    n_dsim = len(used) - n_sim
    if n_sim == 0 or n_dsim == 0:
        raise NoThresholdError(
            f"threshold needs both label classes, got {n_sim} similar and "
            f"{n_dsim} dissimilar usable pairs"
        )
    if projected is None:
        projected = project(model, dataset.features)
    idx = np.array(
        [(dataset.index_of[p.key.lo], dataset.index_of[p.key.hi]) for p in used],
        dtype=np.int64,
    )
    # moments over the (small) labeled set are accumulated in float64
    s, _, _, _ = _cosine_batch(
        projected[idx[:, 0]].astype(np.float64), projected[idx[:, 1]].astype(np.float64)
    )
    y = np.array([p.label for p in used])
    sims = s[y == 1]
    dsims = s[y == 0]
    # population moments: spread of the labeled similarities as observed
    mu_s, mu_d = float(sims.mean()), float(dsims.mean())
    sig_s, sig_d = float(sims.std(ddof=0)), float(dsims.std(ddof=0))
    return ThresholdStats(
        threshold=threshold_from_moments(mu_s, mu_d, sig_s, sig_d, lam),
        mu_sim=mu_s,
        mu_dsim=mu_d,
        sigma_sim=sig_s,
        sigma_dsim=sig_d,
        n_sim=int(n_sim),
        n_dsim=int(n_dsim),
        lam=lam,
    )


@dataclass(frozen=True)
class ScoreTable:
    """Uncertainty scores for candidate pairs.

    ``pairs`` holds item indices, one canonical (lo, hi) row per candidate.
    ``score`` is distance from the decision boundary (lower = more
    uncertain). ``value`` is the quantity the score was derived from: cosine
    similarity for mgue, classifier posterior for bcgue.
    """

    pairs: np.ndarray
    score: np.ndarray
    value: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in ("mgue", "bcgue"):
            raise ConfigError(f"unknown score kind {self.kind!r}")
        if not (len(self.pairs) == len(self.score) == len(self.value)):
            raise ConfigError("pairs, score and value must have equal length")

    def __len__(self) -> int:
        return len(self.score)


def _as_pair_index(pair_indices: np.ndarray) -> np.ndarray:
    idx = np.asarray(pair_indices, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] != 2:
        raise ConfigError(f"pair indices must be (N, 2), got shape {idx.shape}")
    return idx


def pair_similarities(
    model: MetricModel,
    dataset: Dataset,
    pair_indices: np.ndarray,
    projected: np.ndarray | None = None,
) -> np.ndarray:
    """Cosine similarity in the projected space for each candidate row."""
    idx = _as_pair_index(pair_indices)
    if projected is None:
        projected = project(model, dataset.features)
    s, _, _, _ = _cosine_batch(projected[idx[:, 0]], projected[idx[:, 1]])
    return s


def mgue_scores(
    model: MetricModel,
    dataset: Dataset,
    pair_indices: np.ndarray,
    threshold: float,
    projected: np.ndarray | None = None,
) -> ScoreTable:
    """Margin-based uncertainty: distance of pair similarity from the threshold."""
    idx = _as_pair_index(pair_indices)
    s = pair_similarities(model, dataset, idx, projected)
    return ScoreTable(pairs=idx, score=np.abs(s - threshold), value=s, kind="mgue")


def bcgue_posteriors(
    model: MetricModel,
    dataset: Dataset,
    pair_indices: np.ndarray,
    projected: np.ndarray | None = None,
) -> np.ndarray:
    """Pair-classifier posterior P(similar) for each candidate row."""
    if model.classifier is None:
        raise ConfigError("bcgue scoring requires a model with a pair classifier")
    idx = _as_pair_index(pair_indices)
    if projected is None:
        projected = project(model, dataset.features)
    u = np.concatenate([projected[idx[:, 0]], projected[idx[:, 1]]], axis=1)
    logit, _ = classifier_forward(model.classifier, u)
    return sigmoid(logit)


def bcgue_scores(
    model: MetricModel,
    dataset: Dataset,
    pair_indices: np.ndarray,
    projected: np.ndarray | None = None,
) -> ScoreTable:
    """Classifier-based uncertainty: distance of the posterior from one half."""
    idx = _as_pair_index(pair_indices)
    p = bcgue_posteriors(model, dataset, idx, projected)
    return ScoreTable(pairs=idx, score=np.abs(p - 0.5), value=p, kind="bcgue")


def _canonical_order(table: ScoreTable, dataset: Dataset) -> np.ndarray:
    """Total order: score ascending, ties by (lo, hi) id rank. Input-order free."""
    rank = dataset.id_rank
    return np.lexsort((rank[table.pairs[:, 1]], rank[table.pairs[:, 0]], table.score))


def top_p_table(table: ScoreTable, p: int, dataset: Dataset) -> ScoreTable:
    """The p most uncertain candidates, in the canonical deterministic order."""
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    order = _canonical_order(table, dataset)[: min(p, len(table))]
    return ScoreTable(
        pairs=table.pairs[order],
        score=table.score[order],
        value=table.value[order],
        kind=table.kind,
    )


def top_p_uncertain(table: ScoreTable, p: int, dataset: Dataset) -> list[PairKey]:
    """Keys of the p most uncertain candidates (see :func:`top_p_table`)."""
    sub = top_p_table(table, p, dataset)
    return [dataset.pair_key(int(i), int(j)) for i, j in sub.pairs]
