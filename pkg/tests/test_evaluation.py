"""Tests for ranked retrieval and mean average precision."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from anneal.core import Dataset, make_synthetic
from anneal.evaluation import (
    MapResult,
    UndefinedMetricError,
    average_precision,
    map_at_k,
    retrieve,
)
from anneal.metric import ConfigError, init_metric_model, project


def _brute_force_rank(query, archive, rank):
    # oracle: python sort on (-similarity, tie rank) with scalar cosine
    sims = []
    for i, a in enumerate(archive):
        na, nq = np.linalg.norm(a), np.linalg.norm(query)
        s = 0.0 if na == 0 or nq == 0 else float(query @ a / (nq * na))
        sims.append((-s, rank[i], i))
    return [i for _, _, i in sorted(sims)]


class TestRetrieve:
    def test_matches_brute_force_ordering(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(4, 6))
        a = rng.normal(size=(12, 6))
        rank = np.arange(12)
        got = retrieve(q, a, k=12, archive_rank=rank)
        for row in range(4):
            assert list(got[row]) == _brute_force_rank(q[row], a, rank)

    def test_exact_ties_break_by_rank(self):
        q = np.array([[1.0, 0.0]])
        a = np.array([[2.0, 0.0], [1.0, 0.0], [3.0, 0.0], [0.0, 1.0]])
        # first three archive rows have identical similarity 1.0
        rank = np.array([30, 10, 20, 0])
        got = retrieve(q, a, k=4, archive_rank=rank)
        assert list(got[0]) == [1, 2, 0, 3]

    def test_k_clipped_to_archive_size(self):
        q = np.ones((1, 3))
        a = np.ones((2, 3))
        assert retrieve(q, a, k=10).shape == (1, 2)

    def test_single_query_vector_accepted(self):
        a = np.eye(3)
        got = retrieve(np.array([0.0, 1.0, 0.0]), a, k=1)
        assert got.shape == (1, 1)
        assert got[0, 0] == 1

    def test_invalid_k_rejected(self):
        with pytest.raises(ConfigError):
            retrieve(np.ones((1, 2)), np.ones((2, 2)), k=0)


class TestAveragePrecision:
    def test_reference_case(self):
        # relevant at ranks 1 and 3 of five, two relevant in archive
        ap = average_precision(np.array([1, 0, 1, 0, 0]), r=2)
        assert ap == pytest.approx((1.0 / 1 + 2.0 / 3) / 2)
        assert ap == pytest.approx(0.8333333333, abs=1e-9)

    def test_perfect_prefix_is_one(self):
        assert average_precision(np.array([1, 1, 0, 0]), r=2) == pytest.approx(1.0)

    def test_no_hits_is_zero(self):
        assert average_precision(np.zeros(5), r=3) == pytest.approx(0.0)

    def test_r_zero_is_undefined(self):
        assert average_precision(np.array([0, 0]), r=0) is None

    def test_negative_r_rejected(self):
        with pytest.raises(ConfigError):
            average_precision(np.array([1]), r=-1)

    def test_later_hits_score_less(self):
        early = average_precision(np.array([1, 0, 0, 0]), r=1)
        late = average_precision(np.array([0, 0, 0, 1]), r=1)
        assert early > late


def _split_dataset(seed=0, num_classes=4, per_class=9):
    dataset = make_synthetic(num_classes, per_class, dim=8, spread=0.25, seed=seed)
    from anneal.core import assign_splits

    return assign_splits(dataset, (0.6, 0.2, 0.2), seed=seed)


def _oracle_map(proj, dataset, k, cap=True):
    q_idx = dataset.split_indices("val")
    a_idx = dataset.split_indices("test")
    aps = []
    excluded = 0
    for qi in q_idx:
        rank = [(r, i) for r, i in zip(dataset.id_rank[a_idx], a_idx)]
        sims = []
        for (tie, ai) in rank:
            nq, na = np.linalg.norm(proj[qi]), np.linalg.norm(proj[ai])
            s = 0.0 if nq == 0 or na == 0 else float(proj[qi] @ proj[ai] / (nq * na))
            sims.append((-s, tie, ai))
        ordered = [ai for _, _, ai in sorted(sims)][:k]
        total = sum(dataset.class_labels[ai] == dataset.class_labels[qi] for ai in a_idx)
        r = min(total, k) if cap else total
        if r == 0:
            excluded += 1
            continue
        hits, ap = 0, 0.0
        for j, ai in enumerate(ordered, start=1):
            if dataset.class_labels[ai] == dataset.class_labels[qi]:
                hits += 1
                ap += hits / j
        aps.append(ap / r)
    return float(np.mean(aps)), len(aps), excluded


class TestMapAtK:
    def test_matches_brute_force_oracle(self):
        dataset = _split_dataset(seed=1)
        model = init_metric_model(dataset.d0, seed=1, head_dims=(10, 6))
        proj = project(model, dataset.features)
        result = map_at_k(model, dataset, k=5)
        want, n_inc, n_exc = _oracle_map(proj, dataset, k=5)
        assert result.value == pytest.approx(want, rel=1e-6)
        assert result.n_included == n_inc
        assert result.n_excluded == n_exc
        assert len(result.per_query) == len(dataset.split_indices("val"))

    def test_raw_normalizer_flag_matches_oracle(self):
        dataset = _split_dataset(seed=2, num_classes=3, per_class=20)
        model = init_metric_model(dataset.d0, seed=2, head_dims=(10, 6))
        proj = project(model, dataset.features)
        capped = map_at_k(model, dataset, k=3)
        raw = map_at_k(model, dataset, k=3, cap_normalizer=False)
        want_c, _, _ = _oracle_map(proj, dataset, k=3, cap=True)
        want_r, _, _ = _oracle_map(proj, dataset, k=3, cap=False)
        assert capped.value == pytest.approx(want_c, rel=1e-6)
        assert raw.value == pytest.approx(want_r, rel=1e-6)
        # more relevant items than k exist, so the raw normalizer is harsher
        assert raw.value < capped.value

    def test_capped_normalizer_allows_perfect_score(self):
        # tight clusters: every val query can fill its whole window with hits
        dataset = _split_dataset(seed=3, num_classes=2, per_class=15)
        # build a model whose projection is the identity-ish raw space
        model = init_metric_model(dataset.d0, seed=3, head_dims=(16, 8))
        cfg = model.train_config
        from anneal.core import LabeledPair
        from anneal.metric import train

        rng = np.random.default_rng(3)
        pairs, seen = [], set()
        train_idx = dataset.split_indices("train")
        while len(pairs) < 80:
            i, j = rng.choice(train_idx, size=2, replace=False)
            key = dataset.pair_key(int(i), int(j))
            if key in seen:
                continue
            seen.add(key)
            pairs.append(LabeledPair(key, int(dataset.same_class(key)), "simulated", 1.0))
        from anneal.metric import TrainConfig

        trained = train(model, pairs, dataset,
                        TrainConfig(epochs=20, batch_size=16, learning_rate=3e-3, seed=3))
        result = map_at_k(trained, dataset, k=5)
        assert result.value > 0.6

    def test_all_queries_excluded_raises(self):
        # classes in val never appear in test, so relevance is empty everywhere
        n = 8
        ids = tuple(f"i{j}" for j in range(n))
        labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        splits = ("train", "train", "val", "val", "train", "train", "test", "test")
        feats = np.random.default_rng(0).normal(size=(n, 4)).astype(np.float32)
        ds = Dataset(ids, labels, splits, feats, num_classes=2)
        model = init_metric_model(4, head_dims=(3, 2))
        with pytest.raises(UndefinedMetricError):
            map_at_k(model, ds, k=3)

    def test_result_is_deterministic(self):
        dataset = _split_dataset(seed=4)
        model = init_metric_model(dataset.d0, seed=4, head_dims=(10, 6))
        a = map_at_k(model, dataset, k=5)
        b = map_at_k(model, dataset, k=5)
        assert a == b
        assert isinstance(a, MapResult)

    def test_empty_split_rejected(self):
        dataset = make_synthetic(2, 4, dim=4, seed=0)  # no splits assigned
        model = init_metric_model(4, head_dims=(3, 2))
        with pytest.raises(ConfigError, match="empty split"):
            map_at_k(model, dataset, k=2)
