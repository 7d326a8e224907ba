"""Tests for threshold estimation and pair uncertainty scores."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from anneal.core import LabeledPair, make_synthetic
from anneal.metric import (
    ConfigError,
    classifier_forward,
    cosine_similarity,
    init_metric_model,
    project,
    sigmoid,
)
from anneal.uncertainty import (
    BinaryClassifier,  # re-exported alongside the scorer that consumes it
    NoThresholdError,
    ScoreTable,
    ThresholdStats,
    bcgue_posteriors,
    bcgue_scores,
    estimate_threshold,
    mgue_scores,
    pair_similarities,
    threshold_from_moments,
    top_p_table,
    top_p_uncertain,
)


def _setup(seed=0, with_classifier=False):
    dataset = make_synthetic(num_classes=3, per_class=6, dim=8, spread=0.3, seed=seed)
    model = init_metric_model(
        dataset.d0,
        with_classifier=with_classifier,
        seed=seed,
        head_dims=(10, 6),
        classifier_dims=(8, 4),
    )
    rng = np.random.default_rng(seed + 100)
    pairs, seen = [], set()
    while len(pairs) < 30:
        i, j = rng.choice(dataset.n, size=2, replace=False)
        key = dataset.pair_key(int(i), int(j))
        if key in seen:
            continue
        seen.add(key)
        pairs.append(LabeledPair(key, int(dataset.same_class(key)), "simulated", 1.0))
    return dataset, model, pairs


def _candidate_indices(dataset, rng, n=40):
    rows = set()
    while len(rows) < n:
        i, j = sorted(rng.choice(dataset.n, size=2, replace=False))
        lo, hi = dataset.canonical_pair(int(i), int(j))
        rows.add((lo, hi))
    return np.array(sorted(rows), dtype=np.int64)


class TestThresholdFormula:
    def test_reference_moment_case(self):
        got = threshold_from_moments(0.9, 0.10, 0.1, 0.05, lam=3.0)
        assert got == pytest.approx(0.425)

    def test_lambda_zero_is_mean_midpoint(self):
        assert threshold_from_moments(0.8, 0.2, 0.3, 0.1, lam=0.0) == pytest.approx(0.5)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            threshold_from_moments(0.8, 0.2, 0.3, 0.1, lam=-1.0)

    @given(
        st.floats(-1, 1), st.floats(-1, 1),
        st.floats(0, 0.5), st.floats(0, 0.5),
        st.floats(0, 6), st.floats(0, 6),
    )
    @settings(max_examples=60, deadline=None)
    def test_linear_in_lambda_with_spread_slope(self, mu_s, mu_d, sig_s, sig_d, la, lb):
        # widening lam moves the threshold against the similarity-spread gap
        ta = threshold_from_moments(mu_s, mu_d, sig_s, sig_d, la)
        tb = threshold_from_moments(mu_s, mu_d, sig_s, sig_d, lb)
        assert ta - tb == pytest.approx((lb - la) * (sig_s - sig_d) / 2.0, abs=1e-9)


class TestEstimateThreshold:
    def test_matches_scalar_oracle(self):
        dataset, model, pairs = _setup(seed=1)
        stats = estimate_threshold(model, dataset, pairs, lam=3.0)
        # oracle: per-pair scalar cosine, then population moments
        proj = project(model, dataset.features)
        sims, dsims = [], []
        for p in pairs:
            s = cosine_similarity(
                proj[dataset.index_of[p.key.lo]], proj[dataset.index_of[p.key.hi]]
            )
            (sims if p.label == 1 else dsims).append(s)
        mu_s, mu_d = np.mean(sims), np.mean(dsims)
        sig_s, sig_d = np.std(sims, ddof=0), np.std(dsims, ddof=0)
        assert stats.mu_sim == pytest.approx(mu_s, rel=1e-6)
        assert stats.mu_dsim == pytest.approx(mu_d, rel=1e-6)
        assert stats.sigma_sim == pytest.approx(sig_s, rel=1e-6)
        assert stats.sigma_dsim == pytest.approx(sig_d, rel=1e-6)
        want = (mu_s + mu_d - 3.0 * (sig_s - sig_d)) / 2.0
        assert stats.threshold == pytest.approx(want, rel=1e-6)
        assert stats.n_sim == sum(p.label == 1 for p in pairs)
        assert stats.n_dsim == len(pairs) - stats.n_sim

    def test_uses_population_not_sample_std(self):
        dataset, model, pairs = _setup(seed=2)
        two_each = ([p for p in pairs if p.label == 1][:2]
                    + [p for p in pairs if p.label == 0][:2])
        stats = estimate_threshold(model, dataset, two_each, lam=1.0)
        proj = project(model, dataset.features)
        sims = [
            cosine_similarity(proj[dataset.index_of[p.key.lo]], proj[dataset.index_of[p.key.hi]])
            for p in two_each
        ]
        pop = np.std(sims[:2], ddof=0)
        sample = np.std(sims[:2], ddof=1)
        assert stats.sigma_sim == pytest.approx(pop, rel=1e-6)
        assert abs(stats.sigma_sim - sample) > 1e-9

    def test_requires_both_label_classes(self):
        dataset, model, pairs = _setup()
        same_only = [p for p in pairs if p.label == 1]
        with pytest.raises(NoThresholdError, match="both label classes"):
            estimate_threshold(model, dataset, same_only)

    def test_transitive_pairs_can_be_excluded(self):
        dataset, model, pairs = _setup(seed=3)
        derived = [
            LabeledPair(p.key, p.label, "transitive", 0.0)
            for p in pairs[:8]
        ]
        direct = pairs[8:]
        both = direct + derived
        with_t = estimate_threshold(model, dataset, both, include_transitive=True)
        without_t = estimate_threshold(model, dataset, both, include_transitive=False)
        only_direct = estimate_threshold(model, dataset, direct)
        assert without_t == only_direct
        assert with_t.n_sim + with_t.n_dsim == len(both)
        assert without_t.n_sim + without_t.n_dsim == len(direct)

    def test_accepts_precomputed_projection(self):
        dataset, model, pairs = _setup(seed=4)
        proj = project(model, dataset.features)
        a = estimate_threshold(model, dataset, pairs)
        b = estimate_threshold(model, dataset, pairs, projected=proj)
        assert a == b


class TestScores:
    def test_mgue_score_is_distance_from_threshold(self):
        dataset, model, _ = _setup(seed=5)
        rng = np.random.default_rng(5)
        idx = _candidate_indices(dataset, rng)
        table = mgue_scores(model, dataset, idx, threshold=0.4)
        proj = project(model, dataset.features)
        for row in range(len(idx)):
            s = cosine_similarity(proj[idx[row, 0]], proj[idx[row, 1]])
            assert table.value[row] == pytest.approx(s, rel=1e-5)
            assert table.score[row] == pytest.approx(abs(s - 0.4), rel=1e-5, abs=1e-7)
        assert table.kind == "mgue"

    def test_bcgue_posterior_matches_classifier(self):
        dataset, model, _ = _setup(seed=6, with_classifier=True)
        rng = np.random.default_rng(6)
        idx = _candidate_indices(dataset, rng, n=20)
        p = bcgue_posteriors(model, dataset, idx)
        proj = project(model, dataset.features)
        u = np.concatenate([proj[idx[:, 0]], proj[idx[:, 1]]], axis=1)
        logit, _ = classifier_forward(model.classifier, u)
        assert_allclose(p, sigmoid(logit), rtol=1e-6)
        table = bcgue_scores(model, dataset, idx)
        assert_allclose(table.score, np.abs(p - 0.5), rtol=1e-6)
        assert table.kind == "bcgue"

    def test_bcgue_without_classifier_rejected(self):
        dataset, model, _ = _setup(seed=7, with_classifier=False)
        idx = np.array([[0, 1]])
        with pytest.raises(ConfigError, match="classifier"):
            bcgue_scores(model, dataset, idx)

    def test_bad_pair_index_shape_rejected(self):
        dataset, model, _ = _setup()
        with pytest.raises(ConfigError, match="N, 2"):
            pair_similarities(model, dataset, np.array([0, 1, 2]))

    def test_score_table_validation(self):
        with pytest.raises(ConfigError):
            ScoreTable(np.zeros((2, 2), dtype=np.int64), np.zeros(2), np.zeros(2), "other")
        with pytest.raises(ConfigError):
            ScoreTable(np.zeros((2, 2), dtype=np.int64), np.zeros(3), np.zeros(2), "mgue")


class TestTopP:
    def test_returns_lowest_scores(self):
        dataset, model, _ = _setup(seed=8)
        rng = np.random.default_rng(8)
        idx = _candidate_indices(dataset, rng)
        table = mgue_scores(model, dataset, idx, threshold=0.3)
        top = top_p_table(table, 10, dataset)
        assert len(top) == 10
        cutoff = np.sort(table.score)[9]
        assert top.score.max() <= cutoff + 1e-12
        assert_array_equal(np.sort(top.score), top.score)

    def test_order_is_input_permutation_invariant(self):
        dataset, model, _ = _setup(seed=9)
        rng = np.random.default_rng(9)
        idx = _candidate_indices(dataset, rng)
        table = mgue_scores(model, dataset, idx, threshold=0.3)
        perm = rng.permutation(len(idx))
        shuffled = mgue_scores(model, dataset, idx[perm], threshold=0.3)
        a = top_p_uncertain(table, 12, dataset)
        b = top_p_uncertain(shuffled, 12, dataset)
        assert a == b

    def test_exact_ties_break_by_id_rank(self):
        dataset, _, _ = _setup()
        idx = np.array([[3, 4], [0, 1], [0, 2]], dtype=np.int64)
        table = ScoreTable(idx, np.zeros(3), np.zeros(3), "mgue")
        keys = top_p_uncertain(table, 3, dataset)
        ranks = [(dataset.id_rank[dataset.index_of[k.lo]],
                  dataset.id_rank[dataset.index_of[k.hi]]) for k in keys]
        assert ranks == sorted(ranks)

    def test_p_larger_than_pool_returns_all(self):
        dataset, model, _ = _setup()
        idx = np.array([[0, 1], [2, 3]], dtype=np.int64)
        table = mgue_scores(model, dataset, idx, threshold=0.0)
        assert len(top_p_table(table, 99, dataset)) == 2

    def test_p_must_be_positive(self):
        dataset, model, _ = _setup()
        table = mgue_scores(model, dataset, np.array([[0, 1]]), threshold=0.0)
        with pytest.raises(ConfigError):
            top_p_table(table, 0, dataset)


def test_threshold_stats_is_frozen_record():
    stats = ThresholdStats(0.4, 0.9, 0.1, 0.1, 0.05, 10, 12, 3.0)
    with pytest.raises(AttributeError):
        stats.threshold = 0.5
    assert isinstance(BinaryClassifier, type)
