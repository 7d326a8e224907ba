"""The annotation loop: seed pairs, iterate, and benchmark against baselines.

One round works on a frozen snapshot of the labeled set:

1. re-initialize the projection head and pair classifier from this round's
   derived seed and train them on every labeled pair so far,
2. evaluate retrieval quality (queries from the val split against the test
   archive) and re-estimate the similarity threshold,
3. score the unlabeled pair pool, keep the p = 4h most uncertain candidates
   and pick h of them, spread over clusters,
4. hand the batch to an annotator; apply the returned labels, run one
   transitive expansion step, charge one bit per annotated pair.

Steps 1-3 are ``prepare_iteration`` and step 4 is ``apply_iteration``, so a
round can suspend while a human labels the batch. ``run_iteration`` glues
them together with a simulated annotator. Every random draw flows from a
(seed, purpose, iteration) derivation, which makes whole runs replayable.

The classification baseline labels individual items with class labels
instead. Equal information budgets: a pair label costs 1 bit, a class label
costs log2(C) bits, and each round converts the same bit budget into
q = floor((budget + carry) / log2(C)) item labels, carrying the remainder.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import Dataset, LabeledPair, PairKey
from .evaluation import MapResult, map_at_k
from .metric import (
    DEFAULT_CLASSIFIER_DIMS,
    DEFAULT_HEAD_DIMS,
    ConfigError,
    MetricModel,
    ProjectionHead,
    SoftmaxHead,
    TrainConfig,
    class_posteriors,
    init_head,
    init_metric_model,
    init_softmax_head,
    model_from_doc,
    model_to_doc,
    project,
    train,
    train_classifier_head,
)
from .metric import _cosine_batch
from .selection import (
    SelectedPair,
    SelectionBatch,
    SelectionExhausted,
    diversify,
    kmeans,
    transitive_step,
)
from .uncertainty import (
    NoThresholdError,
    ThresholdStats,
    bcgue_scores,
    estimate_threshold,
    mgue_scores,
    top_p_table,
)

POOL_CAP = 2_000_000

PAIR_STRATEGIES = ("mgue", "bcgue", "random")


def derive_seed(base: int, purpose: str, index: int = 0) -> int:
    """Stable child seed for (base, purpose, index); crc32 keys the purpose."""
    entropy = (int(base) & 0xFFFFFFFF, zlib.crc32(purpose.encode("utf-8")), int(index))
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# simulated annotators
# ---------------------------------------------------------------------------

class SimulatedPairOracle:
    """Answers similar/dissimilar by class equality, with optional flip noise."""

    def __init__(self, dataset: Dataset, noise: float = 0.0, seed: int = 0):
        if not 0.0 <= noise < 0.5:
            raise ConfigError(f"noise must be in [0, 0.5), got {noise}")
        self.dataset = dataset
        self.noise = noise
        self._rng = np.random.default_rng(derive_seed(seed, "pair-oracle"))

    def label(self, key: PairKey) -> int:
        truth = int(self.dataset.same_class(key))
        if self.noise > 0.0 and self._rng.random() < self.noise:
            return 1 - truth
        return truth

    def label_batch(self, keys: Sequence[PairKey]) -> list[int]:
        return [self.label(k) for k in keys]


class SimulatedClassOracle:
    """Answers class-label queries straight from the dataset."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset

    def class_of(self, item_id: str) -> int:
        return int(self.dataset.class_labels[self.dataset.index_of[item_id]])


# ---------------------------------------------------------------------------
# candidate pool
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairPool:
    """Unlabeled candidate pairs as (N, 2) item-index rows in canonical order."""

    indices: np.ndarray
    universe: int  # pair count before capping/exclusion

    def __len__(self) -> int:
        return len(self.indices)


def _pair_codes(dataset: Dataset, indices: np.ndarray) -> np.ndarray:
    return indices[:, 0].astype(np.int64) * dataset.n + indices[:, 1]


def _keys_to_rows(dataset: Dataset, keys) -> np.ndarray:
    rows = np.array(
        [(dataset.index_of[k.lo], dataset.index_of[k.hi]) for k in keys],
        dtype=np.int64,
    ).reshape(-1, 2)
    return rows


def build_pool(
    dataset: Dataset,
    exclude=(),
    split: str = "train",
    cap: int = POOL_CAP,
    seed: int = 0,
) -> PairPool:
    """All unordered item pairs of a split, minus excluded keys, capped.

    When the split holds more than ``cap`` pairs, a seeded uniform subsample
    of the full universe is taken BEFORE exclusion, so the candidate
    universe depends only on (dataset, split, cap, seed). That keeps a pool
    rebuilt from a snapshot identical to the one the run actually used.
    """
    if cap < 1:
        raise ConfigError(f"cap must be >= 1, got {cap}")
    split_idx = dataset.split_indices(split)
    by_rank = split_idx[np.argsort(dataset.id_rank[split_idx])]
    m = len(by_rank)
    if m < 2:
        raise ConfigError(f"split {split!r} has {m} items, cannot form pairs")
    a, b = np.triu_indices(m, k=1)
    rows = np.stack([by_rank[a], by_rank[b]], axis=1)
    universe = len(rows)
    if len(rows) > cap:
        rng = np.random.default_rng(derive_seed(seed, "pool"))
        pick = np.sort(rng.choice(len(rows), size=cap, replace=False))
        rows = rows[pick]
    if exclude:
        keep = ~np.isin(
            _pair_codes(dataset, rows),
            _pair_codes(dataset, _keys_to_rows(dataset, exclude)),
        )
        rows = rows[keep]
    return PairPool(indices=rows, universe=universe)


def remove_from_pool(pool: PairPool, dataset: Dataset, keys) -> PairPool:
    keys = list(keys)
    if not keys:
        return pool
    drop = _pair_codes(dataset, _keys_to_rows(dataset, keys))
    keep = ~np.isin(_pair_codes(dataset, pool.indices), drop)
    return PairPool(indices=pool.indices[keep], universe=pool.universe)


# ---------------------------------------------------------------------------
# seed annotation round
# ---------------------------------------------------------------------------

def init_training_set(
    dataset: Dataset,
    fraction: float = 0.05,
    n_same: int = 4,
    n_diff: int = 4,
    seed: int = 0,
    split: str = "train",
    oracle: SimulatedPairOracle | None = None,
) -> tuple[list[LabeledPair], list[str]]:
    """Seed pairs: for a seeded sample of images, pair each with n_same
    same-class and n_diff different-class partners from the same split.

    Labels come from the oracle (class equality when none is given). Pairs
    are deduplicated, cost one bit each, and carry provenance "seed".
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    split_idx = dataset.split_indices(split)
    by_rank = split_idx[np.argsort(dataset.id_rank[split_idx])]
    if len(by_rank) < 2:
        raise ConfigError(f"split {split!r} too small to seed from")
    rng = np.random.default_rng(derive_seed(seed, "init"))
    n_seed = max(1, math.ceil(fraction * len(by_rank)))
    seed_items = rng.choice(by_rank, size=n_seed, replace=False)

    labels = dataset.class_labels
    labeled: dict[PairKey, LabeledPair] = {}
    for si in seed_items:
        same = by_rank[(labels[by_rank] == labels[si]) & (by_rank != si)]
        diff = by_rank[labels[by_rank] != labels[si]]
        for cands, want in ((same, n_same), (diff, n_diff)):
            taken = 0
            for cand in rng.permutation(cands):
                if taken == want:
                    break
                key = dataset.pair_key(int(si), int(cand))
                if key in labeled:
                    continue
                y = oracle.label(key) if oracle else int(dataset.same_class(key))
                labeled[key] = LabeledPair(key, y, "seed", 1.0, 0)
                taken += 1
    return list(labeled.values()), [dataset.ids[i] for i in seed_items]


# ---------------------------------------------------------------------------
# loop state and configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoopConfig:
    strategy: str = "mgue"
    h: int = 50
    p_factor: int = 4
    iterations: int = 5
    lam: float = 3.0
    use_diversity: bool = True
    use_transitivity: bool = True
    include_new_vs_new: bool = True
    include_transitive_in_threshold: bool = True
    init_fraction: float = 0.05
    init_same: int = 4
    init_diff: int = 4
    map_k: int = 5
    pool_cap: int = POOL_CAP
    seed: int = 0
    head_dims: tuple[int, int] = DEFAULT_HEAD_DIMS
    classifier_dims: tuple[int, int] = DEFAULT_CLASSIFIER_DIMS
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.strategy not in PAIR_STRATEGIES:
            raise ConfigError(
                f"strategy must be one of {PAIR_STRATEGIES}, got {self.strategy!r}"
            )
        if self.h < 1:
            raise ConfigError(f"h must be >= 1, got {self.h}")
        if self.p_factor < 1:
            raise ConfigError(f"p_factor must be >= 1, got {self.p_factor}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class IterationRecord:
    """One point on the budget curve: the model trained at ``bits_spent``."""

    iteration: int
    bits_spent: float
    n_pairs: int
    n_transitive: int
    n_conflicts: int
    map_value: float
    map_included: int
    map_excluded: int
    train_loss: float
    threshold: float | None
    mu_sim: float | None
    mu_dsim: float | None
    sigma_sim: float | None
    sigma_dsim: float | None
    n_selected: int


@dataclass(frozen=True)
class ALState:
    dataset: Dataset
    config: LoopConfig
    labeled: dict[PairKey, LabeledPair]
    pool: PairPool
    bits_spent: float
    iteration: int
    history: tuple[IterationRecord, ...]
    seed_image_ids: tuple[str, ...]
    conflicts: int = 0
    model: MetricModel | None = None


@dataclass(frozen=True)
class PendingIteration:
    """A prepared round waiting for labels: trained model plus its batch."""

    iteration: int
    model: MetricModel
    batch: SelectionBatch
    stats: ThresholdStats | None
    map_result: MapResult
    record: IterationRecord


def init_al_state(
    dataset: Dataset,
    config: LoopConfig,
    oracle: SimulatedPairOracle | None = None,
) -> ALState:
    """Label the seed round, optionally expand it transitively, build the pool."""
    pairs, seed_ids = init_training_set(
        dataset,
        fraction=config.init_fraction,
        n_same=config.init_same,
        n_diff=config.init_diff,
        seed=config.seed,
        oracle=oracle,
    )
    labeled = {p.key: p for p in pairs}
    conflicts = 0
    if config.use_transitivity:
        report = transitive_step(
            {}, pairs, iteration=0, include_new_vs_new=config.include_new_vs_new
        )
        for d in report.derived:
            labeled[d.key] = d
        conflicts = len(report.conflicts)
    pool = build_pool(
        dataset,
        exclude=labeled.keys(),
        cap=config.pool_cap,
        seed=config.seed,
    )
    return ALState(
        dataset=dataset,
        config=config,
        labeled=labeled,
        pool=pool,
        bits_spent=float(sum(p.bit_cost for p in labeled.values())),
        iteration=0,
        history=(),
        seed_image_ids=tuple(seed_ids),
        conflicts=conflicts,
    )


def _train_round_model(state: ALState) -> MetricModel:
    cfg = state.config
    model = init_metric_model(
        state.dataset.d0,
        with_classifier=True,
        seed=derive_seed(cfg.seed, "model", state.iteration),
        head_dims=cfg.head_dims,
        classifier_dims=cfg.classifier_dims,
        train_config=replace(cfg.train, seed=derive_seed(cfg.seed, "shuffle", state.iteration)),
    )
    return train(model, list(state.labeled.values()), state.dataset)


def _make_record(state: ALState, map_result: MapResult, stats: ThresholdStats | None,
                 train_loss: float, n_selected: int) -> IterationRecord:
    n_transitive = sum(p.provenance == "transitive" for p in state.labeled.values())
    return IterationRecord(
        iteration=state.iteration,
        bits_spent=state.bits_spent,
        n_pairs=len(state.labeled),
        n_transitive=n_transitive,
        n_conflicts=state.conflicts,
        map_value=map_result.value,
        map_included=map_result.n_included,
        map_excluded=map_result.n_excluded,
        train_loss=train_loss,
        threshold=stats.threshold if stats else None,
        mu_sim=stats.mu_sim if stats else None,
        mu_dsim=stats.mu_dsim if stats else None,
        sigma_sim=stats.sigma_sim if stats else None,
        sigma_dsim=stats.sigma_dsim if stats else None,
        n_selected=n_selected,
    )


def prepare_iteration(state: ALState) -> PendingIteration:
    """Train, evaluate, and select this round's batch; nothing is labeled yet."""
    cfg = state.config
    trained = _train_round_model(state)
    projected = project(trained, state.dataset.features)
    map_result = map_at_k(trained, state.dataset, k=cfg.map_k, projected=projected)

    try:
        stats = estimate_threshold(
            trained,
            state.dataset,
            list(state.labeled.values()),
            lam=cfg.lam,
            include_transitive=cfg.include_transitive_in_threshold,
            projected=projected,
        )
    except NoThresholdError:
        if cfg.strategy == "mgue":
            raise
        stats = None

    if cfg.strategy == "random":
        batch = _random_batch(state, projected)
    else:
        if cfg.strategy == "mgue":
            table = mgue_scores(
                trained, state.dataset, state.pool.indices, stats.threshold, projected
            )
        else:
            table = bcgue_scores(trained, state.dataset, state.pool.indices, projected)
        top = top_p_table(table, cfg.p_factor * cfg.h, state.dataset)
        batch = diversify(
            top,
            cfg.h,
            state.dataset,
            projected,
            seed=derive_seed(cfg.seed, "cluster", state.iteration),
            use_diversity=cfg.use_diversity,
        )

    record = _make_record(
        state, map_result, stats,
        train_loss=trained.loss_log[-1][1],
        n_selected=len(batch.pairs),
    )
    return PendingIteration(
        iteration=state.iteration,
        model=trained,
        batch=batch,
        stats=stats,
        map_result=map_result,
        record=record,
    )


def _random_batch(state: ALState, projected: np.ndarray) -> SelectionBatch:
    cfg = state.config
    pool = state.pool
    if len(pool) < cfg.h:
        raise SelectionExhausted(
            f"need {cfg.h} pairs but only {len(pool)} candidates remain"
        )
    rng = np.random.default_rng(derive_seed(cfg.seed, "select", state.iteration))
    rows = np.sort(rng.choice(len(pool), size=cfg.h, replace=False))
    idx = pool.indices[rows]
    sims, _, _, _ = _cosine_batch(projected[idx[:, 0]], projected[idx[:, 1]])
    picks = tuple(
        SelectedPair(
            key=state.dataset.pair_key(int(i), int(j)),
            score=0.0,
            value=float(s),
            cluster_id=-1,
        )
        for (i, j), s in zip(idx, sims)
    )
    return SelectionBatch(picks, requested=cfg.h)


def apply_iteration(
    state: ALState,
    pending: PendingIteration,
    labels: Sequence[int],
    provenance: str = "human",
) -> ALState:
    """Commit a labeled batch: expand transitively, charge bits, advance."""
    if pending.iteration != state.iteration:
        raise ConfigError(
            f"pending round {pending.iteration} does not match state round "
            f"{state.iteration}"
        )
    keys = pending.batch.keys()
    if len(labels) != len(keys):
        raise ConfigError(f"expected {len(keys)} labels, got {len(labels)}")
    if any(l not in (0, 1) for l in labels):
        raise ConfigError("labels must be 0 or 1")
    for k in keys:
        if k in state.labeled:
            raise ConfigError(f"pair {k} is already labeled")

    new_iter = state.iteration + 1
    new_pairs = [
        LabeledPair(k, int(l), provenance, 1.0, new_iter) for k, l in zip(keys, labels)
    ]
    labeled = dict(state.labeled)
    for p in new_pairs:
        labeled[p.key] = p
    conflicts = state.conflicts
    derived: tuple[LabeledPair, ...] = ()
    if state.config.use_transitivity:
        report = transitive_step(
            state.labeled,
            new_pairs,
            iteration=new_iter,
            include_new_vs_new=state.config.include_new_vs_new,
        )
        derived = report.derived
        for d in derived:
            labeled[d.key] = d
        conflicts += len(report.conflicts)

    removed = [p.key for p in new_pairs] + [d.key for d in derived]
    return replace(
        state,
        labeled=labeled,
        pool=remove_from_pool(state.pool, state.dataset, removed),
        bits_spent=state.bits_spent + float(sum(p.bit_cost for p in new_pairs)),
        iteration=new_iter,
        history=state.history + (pending.record,),
        conflicts=conflicts,
        model=pending.model,
    )


def run_iteration(state: ALState, oracle: SimulatedPairOracle) -> ALState:
    pending = prepare_iteration(state)
    labels = oracle.label_batch(pending.batch.keys())
    return apply_iteration(state, pending, labels, provenance="simulated")


def finalize(state: ALState) -> ALState:
    """Train and evaluate once more on the final pair set; selects nothing."""
    cfg = state.config
    trained = _train_round_model(state)
    projected = project(trained, state.dataset.features)
    map_result = map_at_k(trained, state.dataset, k=cfg.map_k, projected=projected)
    try:
        stats = estimate_threshold(
            trained,
            state.dataset,
            list(state.labeled.values()),
            lam=cfg.lam,
            include_transitive=cfg.include_transitive_in_threshold,
            projected=projected,
        )
    except NoThresholdError:
        stats = None
    record = _make_record(
        state, map_result, stats, train_loss=trained.loss_log[-1][1], n_selected=0
    )
    return replace(state, history=state.history + (record,), model=trained)


def run_loop(
    dataset: Dataset,
    config: LoopConfig,
    oracle: SimulatedPairOracle | None = None,
) -> ALState:
    """Seed, run the configured number of rounds, then train one last time."""
    oracle = oracle or SimulatedPairOracle(dataset, seed=config.seed)
    state = init_al_state(dataset, config, oracle=oracle)
    for _ in range(config.iterations):
        state = run_iteration(state, oracle)
    return finalize(state)


# ---------------------------------------------------------------------------
# classification baseline (class labels, equal information budget)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CALConfig:
    iterations: int = 5
    bits_per_iteration: float = 50.0
    init_bits: float = 320.0
    p_factor: int = 4
    use_diversity: bool = True
    map_k: int = 5
    seed: int = 0
    head_dims: tuple[int, int] = DEFAULT_HEAD_DIMS
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.bits_per_iteration <= 0 or self.init_bits <= 0:
            raise ConfigError("bit budgets must be positive")


@dataclass(frozen=True)
class CALState:
    dataset: Dataset
    config: CALConfig
    labeled_items: dict[str, int]
    bits_spent: float
    carry: float
    iteration: int
    history: tuple[IterationRecord, ...]
    head: ProjectionHead | None = None
    softmax: SoftmaxHead | None = None


def class_label_bits(num_classes: int) -> float:
    """Information content of one class label among C choices."""
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    return math.log2(num_classes)


def items_for_bits(budget: float, carry: float, num_classes: int) -> tuple[int, float]:
    """How many class labels a bit budget buys; remainder carries forward."""
    cost = class_label_bits(num_classes)
    available = budget + carry
    q = int(math.floor(available / cost))
    return q, available - q * cost


def init_cal_state(
    dataset: Dataset,
    config: CALConfig,
    oracle: SimulatedClassOracle | None = None,
) -> CALState:
    oracle = oracle or SimulatedClassOracle(dataset)
    q, carry = items_for_bits(config.init_bits, 0.0, dataset.num_classes)
    split_idx = dataset.split_indices("train")
    by_rank = split_idx[np.argsort(dataset.id_rank[split_idx])]
    if q < 1:
        raise ConfigError("initial bit budget buys no class labels")
    q = min(q, len(by_rank))
    rng = np.random.default_rng(derive_seed(config.seed, "cal-init"))
    chosen = rng.choice(by_rank, size=q, replace=False)
    labeled = {dataset.ids[i]: oracle.class_of(dataset.ids[i]) for i in chosen}
    return CALState(
        dataset=dataset,
        config=config,
        labeled_items=labeled,
        bits_spent=q * class_label_bits(dataset.num_classes),
        carry=carry,
        iteration=0,
        history=(),
    )


def _train_cal_model(state: CALState) -> tuple[ProjectionHead, SoftmaxHead, float]:
    cfg = state.config
    ds = state.dataset
    ids = list(state.labeled_items)
    x = ds.features[[ds.index_of[i] for i in ids]]
    y = np.array([state.labeled_items[i] for i in ids], dtype=np.int64)
    head = init_head(ds.d0, cfg.head_dims, seed=derive_seed(cfg.seed, "cal-model", state.iteration))
    softmax = init_softmax_head(
        cfg.head_dims[1], ds.num_classes,
        seed=derive_seed(cfg.seed, "cal-softmax", state.iteration),
    )
    train_cfg = replace(cfg.train, seed=derive_seed(cfg.seed, "cal-shuffle", state.iteration))
    head, softmax, log = train_classifier_head(head, softmax, x, y, train_cfg)
    return head, softmax, log[-1][1]


def _cal_record(state: CALState, map_result: MapResult, train_loss: float,
                n_selected: int) -> IterationRecord:
    # n_pairs counts labeled items here; pair-only fields stay at their zeros
    return IterationRecord(
        iteration=state.iteration,
        bits_spent=state.bits_spent,
        n_pairs=len(state.labeled_items),
        n_transitive=0,
        n_conflicts=0,
        map_value=map_result.value,
        map_included=map_result.n_included,
        map_excluded=map_result.n_excluded,
        train_loss=train_loss,
        threshold=None,
        mu_sim=None,
        mu_dsim=None,
        sigma_sim=None,
        sigma_dsim=None,
        n_selected=n_selected,
    )


def _select_cal_items(state: CALState, head: ProjectionHead, softmax: SoftmaxHead,
                      q: int) -> list[str]:
    """q unlabeled train items: least classifier confidence, spread over q clusters."""
    cfg = state.config
    ds = state.dataset
    split_idx = ds.split_indices("train")
    unlabeled = np.array(
        [i for i in split_idx if ds.ids[i] not in state.labeled_items], dtype=np.int64
    )
    if len(unlabeled) == 0 or q == 0:
        return []
    q = min(q, len(unlabeled))
    posteriors = class_posteriors(head, softmax, ds.features[unlabeled])
    # least confidence: low top-class posterior means an uncertain item
    uncertainty = 1.0 - posteriors.max(axis=1)
    order = np.lexsort((ds.id_rank[unlabeled], -uncertainty))
    top = order[: min(cfg.p_factor * q, len(unlabeled))]
    cand = unlabeled[top]
    if not cfg.use_diversity or q == 1 or len(cand) <= q:
        return [ds.ids[i] for i in cand[:q]]
    model = MetricModel(head=head, classifier=None, train_config=cfg.train)
    reps = project(model, ds.features[cand]).astype(np.float64)
    clusters = kmeans(reps, k=q, seed=derive_seed(cfg.seed, "cal-cluster", state.iteration))
    chosen: list[int] = []
    taken = np.zeros(len(cand), dtype=bool)
    for c in range(q):
        members = np.flatnonzero(clusters.assignments == c)
        if len(members) == 0:
            continue
        row = int(members[0])  # candidates are uncertainty-ordered already
        chosen.append(row)
        taken[row] = True
    for row in range(len(cand)):
        if len(chosen) == q:
            break
        if not taken[row]:
            chosen.append(row)
            taken[row] = True
    chosen.sort()
    return [ds.ids[cand[r]] for r in chosen]


def run_cal_iteration(state: CALState, oracle: SimulatedClassOracle | None = None) -> CALState:
    """Train on labeled items, record the budget point, buy the next labels."""
    oracle = oracle or SimulatedClassOracle(state.dataset)
    cfg = state.config
    head, softmax, train_loss = _train_cal_model(state)
    model = MetricModel(head=head, classifier=None, train_config=cfg.train)
    map_result = map_at_k(model, state.dataset, k=cfg.map_k)
    q, carry = items_for_bits(cfg.bits_per_iteration, state.carry, state.dataset.num_classes)
    new_ids = _select_cal_items(state, head, softmax, q)
    if len(new_ids) < q:
        # not enough unlabeled items; the unspent budget carries forward
        carry += (q - len(new_ids)) * class_label_bits(state.dataset.num_classes)
    record = _cal_record(state, map_result, train_loss, n_selected=len(new_ids))
    labeled = dict(state.labeled_items)
    for item_id in new_ids:
        labeled[item_id] = oracle.class_of(item_id)
    return replace(
        state,
        labeled_items=labeled,
        bits_spent=state.bits_spent
        + len(new_ids) * class_label_bits(state.dataset.num_classes),
        carry=carry,
        iteration=state.iteration + 1,
        history=state.history + (record,),
        head=head,
        softmax=softmax,
    )


def finalize_cal(state: CALState) -> CALState:
    head, softmax, train_loss = _train_cal_model(state)
    model = MetricModel(head=head, classifier=None, train_config=state.config.train)
    map_result = map_at_k(model, state.dataset, k=state.config.map_k)
    record = _cal_record(state, map_result, train_loss, n_selected=0)
    return replace(state, history=state.history + (record,), head=head, softmax=softmax)


def run_cal(dataset: Dataset, config: CALConfig,
            oracle: SimulatedClassOracle | None = None) -> CALState:
    state = init_cal_state(dataset, config, oracle)
    for _ in range(config.iterations):
        state = run_cal_iteration(state, oracle)
    return finalize_cal(state)


# ---------------------------------------------------------------------------
# experiments: strategies x seeds, aggregated per round
# ---------------------------------------------------------------------------

EXPERIMENT_STRATEGIES = ("mgue", "bcgue", "random", "cal", "mgue-nodiv", "bcgue-nodiv")


@dataclass(frozen=True)
class ExperimentConfig:
    strategies: tuple[str, ...] = ("mgue", "bcgue", "random", "cal")
    seeds: tuple[int, ...] = (0, 1, 2)
    iterations: int = 5
    h: int = 50
    lam: float = 3.0
    init_fraction: float = 0.05
    map_k: int = 5
    use_transitivity: bool = True
    pool_cap: int = POOL_CAP
    head_dims: tuple[int, int] = DEFAULT_HEAD_DIMS
    classifier_dims: tuple[int, int] = DEFAULT_CLASSIFIER_DIMS
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        for s in self.strategies:
            if s not in EXPERIMENT_STRATEGIES:
                raise ConfigError(
                    f"unknown strategy {s!r}; choose from {EXPERIMENT_STRATEGIES}"
                )
        if not self.seeds:
            raise ConfigError("at least one seed is required")


@dataclass(frozen=True)
class RunResult:
    strategy: str
    seed: int
    history: tuple[IterationRecord, ...]


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    runs: tuple[RunResult, ...]
    aggregates: dict

    def history(self, strategy: str, seed: int) -> tuple[IterationRecord, ...]:
        for r in self.runs:
            if r.strategy == strategy and r.seed == seed:
                return r.history
        raise KeyError((strategy, seed))


def loop_config_for(strategy: str, exp: ExperimentConfig, seed: int) -> LoopConfig:
    base, _, variant = strategy.partition("-")
    return LoopConfig(
        strategy=base,
        h=exp.h,
        iterations=exp.iterations,
        lam=exp.lam,
        use_diversity=variant != "nodiv",
        use_transitivity=exp.use_transitivity,
        init_fraction=exp.init_fraction,
        map_k=exp.map_k,
        pool_cap=exp.pool_cap,
        seed=seed,
        head_dims=exp.head_dims,
        classifier_dims=exp.classifier_dims,
        train=exp.train,
    )


def run_strategy(dataset: Dataset, strategy: str, exp: ExperimentConfig,
                 seed: int) -> tuple[IterationRecord, ...]:
    if strategy == "cal":
        # equal information: the pair loop's seed round sets the initial budget
        seed_pairs, _ = init_training_set(dataset, fraction=exp.init_fraction, seed=seed)
        cal_cfg = CALConfig(
            iterations=exp.iterations,
            bits_per_iteration=float(exp.h),
            init_bits=float(len(seed_pairs)),
            map_k=exp.map_k,
            seed=seed,
            head_dims=exp.head_dims,
            train=exp.train,
        )
        return run_cal(dataset, cal_cfg).history
    return run_loop(dataset, loop_config_for(strategy, exp, seed)).history


def run_experiment(dataset: Dataset, exp: ExperimentConfig) -> ExperimentResult:
    runs = []
    for strategy in exp.strategies:
        for seed in exp.seeds:
            runs.append(RunResult(strategy, seed, run_strategy(dataset, strategy, exp, seed)))
    aggregates = {
        strategy: aggregate_histories([r.history for r in runs if r.strategy == strategy])
        for strategy in exp.strategies
    }
    return ExperimentResult(config=exp, runs=tuple(runs), aggregates=aggregates)


def aggregate_histories(histories: Sequence[tuple[IterationRecord, ...]]) -> list[dict]:
    """Per round index across seeds: mean bits plus mAP mean/std/min/max."""
    if not histories:
        return []
    n_rounds = min(len(h) for h in histories)
    out = []
    for i in range(n_rounds):
        bits = np.array([h[i].bits_spent for h in histories])
        maps = np.array([h[i].map_value for h in histories])
        out.append(
            {
                "iteration": i,
                "n_runs": len(histories),
                "bits_mean": float(bits.mean()),
                "map_mean": float(maps.mean()),
                "map_std": float(maps.std(ddof=0)),
                "map_min": float(maps.min()),
                "map_max": float(maps.max()),
            }
        )
    return out


def curve_area(bits: Sequence[float], values: Sequence[float]) -> float:
    """Trapezoid area under a budget curve; the larger, the better overall."""
    bits = np.asarray(bits, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(bits) != len(values) or len(bits) < 2:
        raise ConfigError("need two or more (bits, value) points")
    if np.any(np.diff(bits) < 0):
        raise ConfigError("bits must be non-decreasing")
    return float(np.trapezoid(values, bits))


def write_results_jsonl(path, result: ExperimentResult) -> None:
    """One line per (strategy, seed, round) record, in a stable order."""
    from pathlib import Path

    lines = []
    for run in sorted(result.runs, key=lambda r: (r.strategy, r.seed)):
        for rec in run.history:
            doc = {"strategy": run.strategy, "seed": run.seed, **asdict(rec)}
            lines.append(json.dumps(doc, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_json(path, result: ExperimentResult, extra: dict | None = None) -> None:
    """Config, per-strategy aggregates, and mean curve areas, canonically dumped."""
    from pathlib import Path

    areas = {}
    for strategy in result.config.strategies:
        per_run = []
        for run in result.runs:
            if run.strategy != strategy or len(run.history) < 2:
                continue
            per_run.append(
                curve_area(
                    [r.bits_spent for r in run.history],
                    [r.map_value for r in run.history],
                )
            )
        if per_run:
            areas[strategy] = float(np.mean(per_run))
    doc = {
        "config": asdict(result.config),
        "aggregates": result.aggregates,
        "curve_area_mean": areas,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# serialization for replay and the service layer
# ---------------------------------------------------------------------------

def _record_to_doc(r: IterationRecord) -> dict:
    return asdict(r)


def _record_from_doc(doc: dict) -> IterationRecord:
    return IterationRecord(**doc)


def _config_to_doc(config: LoopConfig) -> dict:
    doc = asdict(config)
    doc["head_dims"] = list(config.head_dims)
    doc["classifier_dims"] = list(config.classifier_dims)
    return doc


def _config_from_doc(doc: dict) -> LoopConfig:
    doc = dict(doc)
    doc["head_dims"] = tuple(doc["head_dims"])
    doc["classifier_dims"] = tuple(doc["classifier_dims"])
    doc["train"] = TrainConfig(**doc["train"])
    return LoopConfig(**doc)


def state_to_doc(state: ALState) -> dict:
    """JSON-ready snapshot; the pool is implied by (config, labeled keys)."""
    return {
        "version": 1,
        "config": _config_to_doc(state.config),
        "labeled": [
            [str(p.key), p.label, p.provenance, p.bit_cost, p.iteration]
            for p in state.labeled.values()
        ],
        "bits_spent": state.bits_spent,
        "iteration": state.iteration,
        "history": [_record_to_doc(r) for r in state.history],
        "seed_image_ids": list(state.seed_image_ids),
        "conflicts": state.conflicts,
        "model": model_to_doc(state.model) if state.model is not None else None,
    }


def state_from_doc(doc: dict, dataset: Dataset) -> ALState:
    if doc.get("version") != 1:
        raise ConfigError(f"unsupported state version {doc.get('version')!r}")
    config = _config_from_doc(doc["config"])
    labeled: dict[PairKey, LabeledPair] = {}
    for key_s, label, provenance, bit_cost, iteration in doc["labeled"]:
        key = PairKey.parse(key_s)
        labeled[key] = LabeledPair(key, int(label), provenance, float(bit_cost), int(iteration))
    pool = build_pool(dataset, exclude=labeled.keys(), cap=config.pool_cap, seed=config.seed)
    model = model_from_doc(doc["model"]) if doc.get("model") else None
    return ALState(
        dataset=dataset,
        config=config,
        labeled=labeled,
        pool=pool,
        bits_spent=float(doc["bits_spent"]),
        iteration=int(doc["iteration"]),
        history=tuple(_record_from_doc(r) for r in doc["history"]),
        seed_image_ids=tuple(doc["seed_image_ids"]),
        conflicts=int(doc["conflicts"]),
        model=model,
    )


def pending_to_doc(pending: PendingIteration) -> dict:
    return {
        "version": 1,
        "iteration": pending.iteration,
        "model": model_to_doc(pending.model),
        "batch": {
            "requested": pending.batch.requested,
            "pairs": [
                [str(p.key), p.score, p.value, p.cluster_id]
                for p in pending.batch.pairs
            ],
        },
        "stats": asdict(pending.stats) if pending.stats else None,
        "map_result": {
            "value": pending.map_result.value,
            "k": pending.map_result.k,
            "n_included": pending.map_result.n_included,
            "n_excluded": pending.map_result.n_excluded,
            "per_query": [[i, a] for i, a in pending.map_result.per_query],
        },
        "record": _record_to_doc(pending.record),
    }


def pending_from_doc(doc: dict) -> PendingIteration:
    if doc.get("version") != 1:
        raise ConfigError(f"unsupported pending version {doc.get('version')!r}")
    batch = SelectionBatch(
        tuple(
            SelectedPair(PairKey.parse(k), float(s), float(v), int(c))
            for k, s, v, c in doc["batch"]["pairs"]
        ),
        requested=int(doc["batch"]["requested"]),
    )
    stats = ThresholdStats(**doc["stats"]) if doc["stats"] else None
    mr = doc["map_result"]
    map_result = MapResult(
        value=float(mr["value"]),
        k=int(mr["k"]),
        n_included=int(mr["n_included"]),
        n_excluded=int(mr["n_excluded"]),
        per_query=tuple((i, a if a is None else float(a)) for i, a in mr["per_query"]),
    )
    return PendingIteration(
        iteration=int(doc["iteration"]),
        model=model_from_doc(doc["model"]),
        batch=batch,
        stats=stats,
        map_result=map_result,
        record=_record_from_doc(doc["record"]),
    )
