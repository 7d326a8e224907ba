"""Batch construction: cluster-diverse picks plus transitive label expansion.

The p most uncertain candidates are spread over h clusters (k-means on an
order-invariant pair representation) and the most uncertain member of each
cluster is sent for annotation, so one tight region of the metric space
cannot monopolize a round's budget.

After labels come back, one transitive step derives extra labels for free:
two labeled pairs sharing a member imply a label for the third side of the
triangle whenever at least one of them is a similar pair. Derived labels
cost zero bits, are never chained (a derived pair is not a source in the
same step), and are dropped with a logged warning when they contradict a
label that already exists.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Dataset, LabeledPair, PairKey
from .metric import ConfigError
from .uncertainty import ScoreTable

logger = logging.getLogger(__name__)

# allow this much relative slack before calling a float SSE increase a bug
SSE_RTOL = 1e-9


class SelectionExhausted(RuntimeError):
    """Raised when the candidate pool cannot fill the requested batch."""


def pair_representation(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Order-invariant embedding of a pair: concat(f1 + f2, |f1 - f2|)."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    return np.concatenate([f1 + f2, np.abs(f1 - f2)], axis=-1)


def pair_representations(projected: np.ndarray, pair_indices: np.ndarray) -> np.ndarray:
    """(N, 2d) representations for candidate index rows."""
    idx = np.asarray(pair_indices, dtype=np.int64)
    return pair_representation(projected[idx[:, 0]], projected[idx[:, 1]])


# ---------------------------------------------------------------------------
# k-means (Lloyd with k-means++ seeding)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    sse_history: tuple[float, ...]
    empty_clusters: tuple[int, ...]
    n_iter: int

    @property
    def k(self) -> int:
        return len(self.centroids)


def _sq_dist_to(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) squared euclidean distances, float64 throughout
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plus_plus_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every remaining point coincides with a chosen centroid
            chosen[c] = rng.integers(n)
        else:
            chosen[c] = rng.choice(n, p=d2 / total)
        d2 = np.minimum(d2, np.sum((points - points[chosen[c]]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> ClusterModel:
    """Lloyd's algorithm. Ties in assignment go to the lowest cluster index;
    a cluster that loses all members keeps its previous centroid. The SSE
    after each assignment step is recorded and checked to be non-increasing.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ConfigError(f"points must be (N, d), got shape {points.shape}")
    n = len(points)
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_seed(points, k, rng)

    history: list[float] = []
    assignments = np.full(n, -1, dtype=np.int64)
    for it in range(max_iter):
        d2 = _sq_dist_to(points, centroids)
        new_assign = np.argmin(d2, axis=1)
        sse = float(d2[np.arange(n), new_assign].sum())
        if history and sse > history[-1] * (1.0 + SSE_RTOL) + 1e-12:
            raise RuntimeError(
                f"SSE increased from {history[-1]!r} to {sse!r} at iteration {it}"
            )
        history.append(sse)
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for c in range(k):
            members = points[assignments == c]
            if len(members):
                centroids[c] = members.mean(axis=0)

    empty = tuple(int(c) for c in range(k) if not np.any(assignments == c))
    if empty:
        logger.warning("kmeans finished with %d empty clusters: %s", len(empty), empty)
    return ClusterModel(
        centroids=centroids,
        assignments=assignments,
        sse_history=tuple(history),
        empty_clusters=empty,
        n_iter=len(history),
    )


# ---------------------------------------------------------------------------
# diverse batch selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SelectedPair:
    key: PairKey
    score: float
    value: float
    cluster_id: int


@dataclass(frozen=True)
class SelectionBatch:
    pairs: tuple[SelectedPair, ...]
    requested: int
    cluster: ClusterModel | None = None

    def keys(self) -> list[PairKey]:
        return [p.key for p in self.pairs]


def diversify(
    table: ScoreTable,
    h: int,
    dataset: Dataset,
    projected: np.ndarray,
    seed: int = 0,
    use_diversity: bool = True,
) -> SelectionBatch:
    """Pick h pairs from an uncertainty-ordered candidate table.

    ``table`` must already be in the canonical most-uncertain-first order
    (see ``top_p_table``). With diversity on, candidates are clustered into h
    groups and the most uncertain member of each group is picked; clusters
    that end up empty surrender their slot to the globally most uncertain
    remaining candidate. With diversity off, the h most uncertain candidates
    are picked directly.
    """
    if h < 1:
        raise ConfigError(f"h must be >= 1, got {h}")
    if len(table) < h:
        raise SelectionExhausted(
            f"need {h} pairs but only {len(table)} candidates remain"
        )

    def pick(row: int, cluster_id: int) -> SelectedPair:
        i, j = int(table.pairs[row, 0]), int(table.pairs[row, 1])
        return SelectedPair(
            key=dataset.pair_key(i, j),
            score=float(table.score[row]),
            value=float(table.value[row]),
            cluster_id=cluster_id,
        )

    if not use_diversity:
        return SelectionBatch(tuple(pick(r, -1) for r in range(h)), requested=h)

    reps = pair_representations(projected, table.pairs)
    model = kmeans(reps, k=h, seed=seed)
    chosen: list[int] = []
    taken = np.zeros(len(table), dtype=bool)
    cluster_of: dict[int, int] = {}
    for c in range(h):
        members = np.flatnonzero(model.assignments == c)
        if len(members) == 0:
            continue
        row = int(members[0])  # table rows are already most-uncertain-first
        chosen.append(row)
        taken[row] = True
        cluster_of[row] = c
    for row in range(len(table)):  # empty-cluster slots fall back to global order
        if len(chosen) == h:
            break
        if not taken[row]:
            chosen.append(row)
            taken[row] = True
            cluster_of[row] = -1
    chosen.sort()
    return SelectionBatch(
        tuple(pick(r, cluster_of[r]) for r in chosen),
        requested=h,
        cluster=model,
    )


# ---------------------------------------------------------------------------
# transitive label expansion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransitiveReport:
    derived: tuple[LabeledPair, ...]
    conflicts: tuple[str, ...]
    duplicates: int


def _implied_label(y_ab: int, y_bc: int) -> int | None:
    # similar+similar -> similar, similar+dissimilar -> dissimilar,
    # dissimilar+dissimilar -> nothing can be said
    if y_ab == 1 and y_bc == 1:
        return 1
    if y_ab + y_bc == 1:
        return 0
    return None


def transitive_step(
    existing: Mapping[PairKey, LabeledPair] | Iterable[LabeledPair],
    new_pairs: Sequence[LabeledPair],
    iteration: int = 0,
    include_new_vs_new: bool = True,
) -> TransitiveReport:
    """One round of zero-cost label derivation; derivations never chain.

    Each new pair is matched against every source pair (existing labels, plus
    the other new labels unless ``include_new_vs_new`` is off) sharing exactly
    one member. The first derivation of a key wins; a later derivation that
    disagrees, or one that contradicts a known label, is logged and dropped.
    """
    if isinstance(existing, Mapping):
        known: dict[PairKey, int] = {k: p.label for k, p in existing.items()}
    else:
        known = {p.key: p.label for p in existing}
    sources = dict(known)
    for p in new_pairs:
        sources[p.key] = p.label
        known[p.key] = p.label

    # member -> [(other end, label)] over the allowed source pairs
    new_keys = {p.key for p in new_pairs}
    adjacency: dict[str, list[tuple[str, int]]] = {}
    for key, label in sources.items():
        if not include_new_vs_new and key in new_keys:
            continue
        adjacency.setdefault(key.lo, []).append((key.hi, label))
        adjacency.setdefault(key.hi, []).append((key.lo, label))
    for ends in adjacency.values():
        ends.sort()

    derived: dict[PairKey, LabeledPair] = {}
    conflicts: list[str] = []
    duplicates = 0
    for p in new_pairs:
        for shared, far in ((p.key.lo, p.key.hi), (p.key.hi, p.key.lo)):
            for other, other_label in adjacency.get(shared, ()):
                if other == far:
                    continue  # that source is this very pair
                label = _implied_label(p.label, other_label)
                if label is None:
                    continue
                key = PairKey(far, other)
                if key in known:
                    if known[key] != label:
                        conflicts.append(
                            f"{key}: derived {label} contradicts known {known[key]}"
                        )
                    continue
                if key in derived:
                    if derived[key].label != label:
                        conflicts.append(
                            f"{key}: derived {label} contradicts earlier derived "
                            f"{derived[key].label}"
                        )
                    else:
                        duplicates += 1
                    continue
                derived[key] = LabeledPair(
                    key, label, provenance="transitive", bit_cost=0.0,
                    iteration=iteration,
                )
    for msg in conflicts:
        logger.warning("transitive conflict dropped: %s", msg)
    ordered = tuple(derived[k] for k in sorted(derived))
    return TransitiveReport(ordered, tuple(conflicts), duplicates)
