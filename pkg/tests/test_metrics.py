"""PR-AUC, precision/recall, R^2, MSE and threshold calibration."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doctor2vec.errors import ValidationError
from doctor2vec.metrics import (
    calibrate_threshold,
    macro_pr_auc,
    mse_score,
    pr_auc,
    precision_recall,
    r2_score,
)


def brute_pr_auc(scores, labels):
    """Enumerate every distinct threshold from the top down; predicted positive means score >= threshold."""
    n_pos = sum(labels)
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= t]
        tp = sum(picked)
        precision, recall = tp / len(picked), tp / n_pos
        total += precision * (recall - prev_recall)
        prev_recall = recall
    return total


def random_instrument(rng):
    n = int(rng.integers(2, 21))
    labels = rng.integers(0, 2, size=n)
    if labels.sum() in (0, n):
        labels[0], labels[-1] = 1, 0
    # coarse grid so that tied scores occur often
    scores = rng.integers(0, 6, size=n) / 5.0 if rng.uniform() < 0.5 else rng.uniform(size=n)
    return scores, labels


class TestPRAUC:
    def test_perfect_ranking(self):
        assert pr_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0

    def test_four_sample_example(self):
        scores, labels = [0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]
        assert pr_auc(scores, labels) == pytest.approx(brute_pr_auc(scores, labels), abs=1e-12)
        assert pr_auc(scores, labels) == pytest.approx(0.5 * 1.0 + 0.5 * (2 / 3), abs=1e-15)

    def test_reversed_perfect_ranking(self):
        scores, labels = [0.1, 0.2, 0.3, 0.4], [1, 1, 0, 0]
        assert pr_auc(scores, labels) == pytest.approx(brute_pr_auc(scores, labels), abs=1e-12)
        assert pr_auc(scores, labels) == pytest.approx(0.5 * (1 / 3) + 0.5 * 0.5, abs=1e-15)

    def test_all_ties_is_prevalence(self):
        assert pr_auc([0.5] * 5, [1, 0, 0, 1, 0]) == pytest.approx(0.4, abs=1e-15)

    def test_matches_brute_force_on_1000_instruments(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            scores, labels = random_instrument(rng)
            assert abs(pr_auc(scores, labels) - brute_pr_auc(list(scores), list(labels))) <= 1e-12

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        maps = [np.exp, np.arctan, lambda x: x ** 3, lambda x: 5 * x - 2, lambda x: np.log1p(x)]
        for i in range(100):
            scores, labels = random_instrument(rng)
            f = maps[i % len(maps)]
            a, b = rng.uniform(0.1, 3.0), rng.uniform(-1, 1)
            assert pr_auc(f(a * scores + b + 2.0), labels) == pytest.approx(pr_auc(scores, labels), abs=1e-12)

    def test_random_scores_near_prevalence(self):
        rng = np.random.default_rng(2)
        values = []
        for _ in range(200):
            labels = np.repeat([1, 0], 100)
            values.append(pr_auc(rng.uniform(size=200), labels))
        assert abs(np.mean(values) - 0.5) <= 0.1

    @pytest.mark.parametrize("labels, cls", [([0, 0, 0], "negative"), ([1, 1], "positive")])
    def test_degenerate_labels_named(self, labels, cls):
        with pytest.raises(ValidationError, match=cls):
            pr_auc(np.arange(len(labels)), labels)

    def test_macro_skips_absent_classes(self):
        probs = np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1], [0.1, 0.8, 0.1]])
        macro, per = macro_pr_auc(probs, [0, 1, 0, 1])
        assert macro == 1.0 and np.isnan(per[2])


class TestRegressionMetrics:
    def test_r2_examples(self):
        y = np.array([0.1, 0.4, 0.35, 0.9])
        assert r2_score(y, y) == 1.0
        assert r2_score(np.full(4, y.mean()), y) == pytest.approx(0.0, abs=1e-15)

    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_two_pass_oracles(self, pairs):
        yhat = [p for p, _ in pairs]
        y = [a for _, a in pairs]
        mean = math.fsum(y) / len(y)
        ss_tot = math.fsum((v - mean) ** 2 for v in y)
        ss_res = math.fsum((a - p) ** 2 for p, a in pairs)
        assert mse_score(yhat, y) == pytest.approx(ss_res / len(y), rel=1e-12, abs=1e-12)
        if ss_tot > 1e-6:
            assert r2_score(yhat, y) == pytest.approx(1.0 - ss_res / ss_tot, rel=1e-9, abs=1e-9)

    def test_r2_joint_affine_invariance(self):
        rng = np.random.default_rng(3)
        y, yhat = rng.normal(size=20), rng.normal(size=20)
        assert r2_score(3 * yhat - 7, 3 * y - 7) == pytest.approx(r2_score(yhat, y), abs=1e-12)

    def test_r2_zero_variance(self):
        with pytest.raises(ValidationError):
            r2_score([0.1, 0.2], [0.5, 0.5])


class TestPrecisionRecall:
    def test_hand_counted_confusion(self):
        # rows: true class, columns: predicted class -> [[3, 1], [2, 4]]
        true = [0] * 4 + [1] * 6
        pred = [0, 0, 0, 1] + [0, 0, 1, 1, 1, 1]
        pr = precision_recall(pred, true, n_classes=2)
        np.testing.assert_allclose(pr.precision, [3 / 5, 4 / 5])
        np.testing.assert_allclose(pr.recall, [3 / 4, 4 / 6])
        assert pr.macro_precision == pytest.approx(0.7)

    def test_all_correct(self):
        pr = precision_recall([0, 2, 4, 2], [0, 2, 4, 2])
        assert np.all(pr.precision[[0, 2, 4]] == 1.0) and np.all(pr.recall[[0, 2, 4]] == 1.0)
        assert pr.macro_precision == 1.0

    def test_never_predicted_class_is_flagged(self):
        pr = precision_recall([0, 0, 0], [0, 1, 0], n_classes=2)
        assert pr.precision[1] == 0.0 and pr.zero_precision[1] and not pr.zero_recall[1]


class TestCalibration:
    def test_separated_scores_pick_lowest_maximizer(self):
        probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.2, 0.8]])
        th = calibrate_threshold(probs, [0, 0, 1, 1], n_classes=2)
        # any threshold in (0.3, 0.8] separates class 0; the grid's first maximizer is 0.31
        assert th.values[0] == pytest.approx(0.31) and th.values[1] == pytest.approx(0.21)
        np.testing.assert_array_equal(th.decide(probs), [0, 0, 1, 1])

    def test_uniform_predictor_falls_back(self):
        with pytest.warns(RuntimeWarning):
            th = calibrate_threshold(np.full((6, 5), 0.2), [0, 1, 2, 3, 4, 0])
        assert th.fallback

    def test_single_class_falls_back(self):
        probs = np.random.default_rng(0).dirichlet(np.ones(5), size=8)
        with pytest.warns(RuntimeWarning):
            th = calibrate_threshold(probs, [2] * 8)
        np.testing.assert_array_equal(th.decide(probs), probs.argmax(axis=1))

    def test_reproducible(self):
        rng = np.random.default_rng(4)
        probs, labels = rng.dirichlet(np.ones(5), size=50), rng.integers(0, 5, size=50)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            a = calibrate_threshold(probs, labels)
        np.testing.assert_array_equal(a.values, calibrate_threshold(probs, labels).values)
