import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given

import oracles
from uqgan.errors import InvalidArgumentError, UndefinedMetricError
from uqgan.metrics import (
    ScoredSet,
    auroc,
    auroc_success_failure,
    aupr,
    ece,
    evaluate_scores,
    fpr_at_95_tpr,
)
from uqgan.ova_core import uncertainty_report


@st.composite
def scored_sets(draw, max_size=50):
    n = draw(st.integers(2, max_size))
    labels = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    if all(labels) or not any(labels):
        labels[0] = not labels[0]
    # a small value pool forces ties
    pool = draw(st.integers(2, 12))
    scores = draw(st.lists(st.integers(0, pool), min_size=n, max_size=n))
    return ScoredSet(np.array(scores) / pool, np.array(labels))


class TestAuroc:
    def test_separated(self):
        assert auroc(ScoredSet([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])) == 1.0

    def test_all_tied(self):
        assert auroc(ScoredSet([0.3] * 6, [0, 1, 0, 1, 1, 0])) == 0.5

    def test_hand_counted(self):
        assert auroc(ScoredSet([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])) == 0.75

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auroc(ScoredSet([0.1, 0.2], [1, 1]))

    @given(scored_sets())
    def test_matches_pair_counting(self, s):
        assert abs(auroc(s) - oracles.auroc_pairs(s.scores, s.labels)) <= 1e-12

    @given(scored_sets())
    def test_monotone_invariance(self, s):
        assert abs(auroc(s) - auroc(ScoredSet(np.exp(3 * s.scores) - 7, s.labels))) <= 1e-12

    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=30, unique=True), st.randoms())
    def test_flip_complement(self, scores, r):
        labels = np.array([i % 2 == 0 for i in range(len(scores))])
        r.shuffle(labels)
        s = ScoredSet(scores, labels)
        assert auroc(s) + auroc(ScoredSet(scores, ~labels)) == pytest.approx(1.0, abs=1e-12)


class TestAupr:
    def test_perfect(self):
        assert aupr(ScoredSet([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])) == 1.0

    @pytest.mark.parametrize("k", [1, 3, 9])
    def test_single_positive_last(self, k):
        scores = np.r_[np.linspace(1, 2, k), 0.0]
        labels = np.r_[np.zeros(k), 1]
        assert aupr(ScoredSet(scores, labels)) == pytest.approx(1 / (k + 1), abs=1e-15)

    @given(scored_sets())
    def test_out_is_flipped_in(self, s):
        assert aupr(s, "out") == aupr(ScoredSet(-s.scores, ~s.labels), "in")

    @given(scored_sets())
    def test_matches_sweep(self, s):
        assert abs(aupr(s, "in") - oracles.average_precision_sweep(s.scores, s.labels)) <= 1e-12
        assert abs(aupr(s, "out") - oracles.average_precision_sweep(-s.scores, ~s.labels)) <= 1e-12

    def test_bad_positive(self):
        with pytest.raises(InvalidArgumentError):
            aupr(ScoredSet([0.1, 0.2], [0, 1]), "both")


class TestFpr:
    def test_separated(self):
        assert fpr_at_95_tpr(ScoredSet([0.9, 0.8, 0.1], [1, 1, 0])) == 0.0

    def test_all_tied(self):
        assert fpr_at_95_tpr(ScoredSet([0.5] * 5, [1, 1, 0, 1, 0])) == 1.0

    def test_twenty_of_twentyone(self):
        # 20/21 positives above the negatives already gives TPR 0.952 >= 0.95
        s = ScoredSet([0.9] * 20 + [0.1] + [0.5] * 5, [1] * 21 + [0] * 5)
        assert fpr_at_95_tpr(s) == oracles.fpr_at_tpr_sweep(s.scores, s.labels) == 0.0

    def test_threshold_drops_below_negatives(self):
        s = ScoredSet([0.9] * 18 + [0.1] * 2 + [0.5] * 5, [1] * 20 + [0] * 5)
        assert fpr_at_95_tpr(s) == 1.0

    @given(scored_sets())
    def test_matches_sweep(self, s):
        assert abs(fpr_at_95_tpr(s) - oracles.fpr_at_tpr_sweep(s.scores, s.labels)) <= 1e-12


class TestEce:
    def test_perfect(self):
        p = np.eye(3)[[0, 1, 2, 0]]
        assert ece(p, [0, 1, 2, 0]) == 0.0

    def test_two_samples(self):
        p = np.array([[0.8, 0.2], [0.8, 0.2]])
        assert ece(p, [0, 1]) == pytest.approx(0.3, abs=1e-12)

    def test_uniform_posteriors(self):
        p = np.full((4, 2), 0.5)
        labels = [0, 0, 0, 1]
        expected = oracles.ece_bins(p, labels)
        assert expected == pytest.approx(0.25)
        assert ece(p, labels) == pytest.approx(expected, abs=1e-12)

    def test_unnormalised(self):
        with pytest.raises(InvalidArgumentError):
            ece([[0.5, 0.6]], [0])

    @given(st.integers(0, 2**31 - 1), st.integers(1, 50), st.integers(2, 5))
    def test_matches_binning(self, seed, n, k):
        rng = np.random.default_rng(seed)
        # quantised logits give ties and confidences exactly on bin edges
        w = rng.integers(1, 6, size=(n, k)).astype(float)
        p = w / w.sum(axis=1, keepdims=True)
        y = rng.integers(0, k, size=n)
        val = ece(p, y)
        assert abs(val - oracles.ece_bins(p, y)) <= 1e-12
        assert 0.0 <= val <= 1.0


class TestSuccessFailure:
    def test_all_correct(self):
        r = uncertainty_report(np.array([[0.9, 0.1], [0.2, 0.8]]), [0.5, 0.5])
        with pytest.raises(UndefinedMetricError):
            auroc_success_failure(r, [0, 1], [0, 1])

    def test_entropy_ranks_successes(self):
        r = uncertainty_report(np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]), [0.5, 0.5])
        assert auroc_success_failure(r, [0, 0, 1], [0, 1, 1]) == 1.0

    def test_list_of_reports(self):
        reps = [uncertainty_report(c, [0.5, 0.5]) for c in ([1.0, 0.0], [0.5, 0.5])]
        assert auroc_success_failure(reps, [0, 0], [0, 1]) == 1.0

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(7)
        vals = []
        for _ in range(200):
            c = rng.uniform(size=(40, 3))
            r = uncertainty_report(c, np.ones(3) / 3)
            y = rng.integers(0, 3, size=40)
            vals.append(auroc_success_failure(r, r.prediction, y))
        assert np.mean(vals) == pytest.approx(0.5, abs=0.02)


def test_evaluate_scores_layout():
    rng = np.random.default_rng(0)
    post = rng.dirichlet(np.ones(3), size=30)
    y = post.argmax(axis=1)
    y[:5] = (y[:5] + 1) % 3
    rep = evaluate_scores(post, y, rng.uniform(0.5, 1, 30), -rng.uniform(size=30),
                          {"a": rng.uniform(0, 0.6, 20), "b": rng.uniform(0, 0.7, 10)})
    assert set(rep.per_ood_dataset) == {"a", "b"}
    assert rep.accuracy == pytest.approx(25 / 30)
    for v in (rep.accuracy, rep.auroc_sf, rep.ece, rep.auroc_ood, rep.aupr_in, rep.aupr_out, rep.fpr_at_95_tpr):
        assert 0.0 <= v <= 1.0
    assert not math.isnan(rep.auroc_ood)
