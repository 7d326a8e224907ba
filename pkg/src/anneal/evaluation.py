"""Retrieval quality: ranked neighbours and mean average precision at k.

Queries come from one split and are ranked against an archive split by
cosine similarity in the projected space. A retrieved item is relevant when
it shares the query's class. Per query,

    AP@k = (1/r) * sum_{j<=k} Prec(j) * rel(j)

where rel(j) is 1 when rank j is relevant and r normalizes the score. By
default r = min(number of relevant archive items, k), so a query with
plenty of relevant material can still reach AP 1.0 inside a k-deep window;
``cap_normalizer=False`` divides by the full relevant count instead.
Queries with no relevant archive item are excluded from the mean (and
counted). mAP is the mean AP over included queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .metric import ConfigError, MetricModel, project

DEFAULT_K = 5


class UndefinedMetricError(ValueError):
    """Raised when no query has any relevant archive item."""


def retrieve(
    query_features: np.ndarray,
    archive_features: np.ndarray,
    k: int,
    archive_rank: np.ndarray | None = None,
) -> np.ndarray:
    """Top-k archive rows per query by cosine similarity, descending.

    Exact similarity ties are broken toward the lower ``archive_rank``
    (archive row order when no ranks are given), so results do not depend on
    how the archive happens to be laid out in memory.
    """
    q = np.asarray(query_features, dtype=np.float64)
    a = np.asarray(archive_features, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if archive_rank is None:
        archive_rank = np.arange(len(a))
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    an = np.linalg.norm(a, axis=1, keepdims=True)
    qs = np.where(qn == 0.0, 1.0, qn)
    as_ = np.where(an == 0.0, 1.0, an)
    sims = (q / qs) @ (a / as_).T  # zero-norm rows contribute similarity 0
    k = min(k, len(a))
    out = np.empty((len(q), k), dtype=np.int64)
    for row in range(len(q)):
        order = np.lexsort((archive_rank, -sims[row]))
        out[row] = order[:k]
    return out


def average_precision(relevance: np.ndarray, r: int) -> float | None:
    """AP of one ranked relevance vector, normalized by r; None when r == 0."""
    if r < 0:
        raise ConfigError(f"r must be >= 0, got {r}")
    if r == 0:
        return None
    rel = np.asarray(relevance, dtype=np.float64)
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float((rel * hits / ranks).sum() / r)


@dataclass(frozen=True)
class MapResult:
    """Mean average precision with the per-query breakdown behind it."""

    value: float
    k: int
    n_included: int
    n_excluded: int
    per_query: tuple[tuple[str, float | None], ...]


def map_at_k(
    model: MetricModel,
    dataset: Dataset,
    k: int = DEFAULT_K,
    query_split: str = "val",
    archive_split: str = "test",
    cap_normalizer: bool = True,
    projected: np.ndarray | None = None,
) -> MapResult:
    """mAP@k of the current metric space, queries vs archive by split."""
    q_idx = dataset.split_indices(query_split)
    a_idx = dataset.split_indices(archive_split)
    if len(q_idx) == 0 or len(a_idx) == 0:
        raise ConfigError(
            f"empty split: {len(q_idx)} queries in {query_split!r}, "
            f"{len(a_idx)} archive items in {archive_split!r}"
        )
    if projected is None:
        projected = project(model, dataset.features)
    ranked = retrieve(projected[q_idx], projected[a_idx], k, dataset.id_rank[a_idx])

    q_classes = dataset.class_labels[q_idx]
    a_classes = dataset.class_labels[a_idx]
    per_query: list[tuple[str, float | None]] = []
    aps: list[float] = []
    for row, qi in enumerate(q_idx):
        total_relevant = int((a_classes == q_classes[row]).sum())
        r = min(total_relevant, k) if cap_normalizer else total_relevant
        rel = (a_classes[ranked[row]] == q_classes[row]).astype(np.float64)
        ap = average_precision(rel, r)
        per_query.append((dataset.ids[qi], ap))
        if ap is not None:
            aps.append(ap)
    if not aps:
        raise UndefinedMetricError(
            f"no query in {query_split!r} has a relevant item in {archive_split!r}"
        )
    return MapResult(
        value=float(np.mean(aps)),
        k=k,
        n_included=len(aps),
        n_excluded=len(per_query) - len(aps),
        per_query=tuple(per_query),
    )
