import unittest

import numpy as np
import pytest
from sklearn.metrics import precision_recall_fscore_support

from evaluation.metrics import Average, ConfusionMatrix, confusion, ovr_metrics, roc_auc


def _brute_force(counts: np.ndarray) -> tuple[list[float], list[float], list[float]]:
    """Per-class one-vs-rest P/R/F1 by explicit TP/FP/FN counting."""
    size = counts.shape[0]
    precision, recall, f1 = [], [], []
    for k in range(size):
        tp = fp = fn = 0
        for t in range(size):
            for p in range(size):
                c = int(counts[t, p])
                if t == k and p == k:
                    tp += c
                elif p == k:
                    fp += c
                elif t == k:
                    fn += c
        pk = tp / (tp + fp) if tp + fp else 0.0
        rk = tp / (tp + fn) if tp + fn else 0.0
        precision.append(pk)
        recall.append(rk)
        f1.append(2 * pk * rk / (pk + rk) if pk + rk else 0.0)
    return precision, recall, f1


def _random_counts(rng: np.random.Generator) -> np.ndarray:
    size = int(rng.integers(2, 7))
    counts = rng.integers(0, 20, size=(size, size))
    # some classes absent from truths, predictions or both
    if rng.random() < 0.3:
        counts[int(rng.integers(size))] = 0
    if rng.random() < 0.3:
        counts[:, int(rng.integers(size))] = 0
    if counts.sum() == 0:
        counts[0, 0] = 1
    return counts


class TestConfusion(unittest.TestCase):
    def test_all_correct(self):
        truths = np.repeat([0, 1, 2], 3)
        cm = confusion(truths, truths, 3)
        np.testing.assert_array_equal(cm.counts, np.diag([3, 3, 3]))

    def test_single_counts(self):
        cm = confusion(np.array([1, 1]), np.array([0, 1]), 2)
        self.assertEqual(cm.counts[0, 1], 1)
        self.assertEqual(cm.counts[1, 1], 1)
        self.assertEqual(cm.total, 2)

    def test_total_is_sample_count(self):
        rng = np.random.default_rng(0)
        preds, truths = rng.integers(0, 4, 57), rng.integers(0, 4, 57)
        self.assertEqual(confusion(preds, truths, 4).total, 57)

    def test_unseen_classes_get_zero_rows(self):
        cm = confusion(np.array([0, 0]), np.array([0, 0]), 3)
        self.assertEqual(cm.counts.shape, (3, 3))

    def test_index_out_of_range(self):
        with self.assertRaises(ValueError):
            confusion(np.array([0, 3]), np.array([0, 1]), 3)
        with self.assertRaises(ValueError):
            confusion(np.array([0, 1]), np.array([-1, 1]), 3)

    def test_length_mismatch(self):
        with self.assertRaises(ValueError):
            confusion(np.array([0, 1, 1]), np.array([0, 1]), 2)

    def test_invalid_counts(self):
        with self.assertRaises(ValueError):
            ConfusionMatrix(np.array([[1, -1], [0, 2]]))
        with self.assertRaises(ValueError):
            ConfusionMatrix(np.zeros((2, 3)))


class TestOvrMetrics(unittest.TestCase):
    def test_binary_example(self):
        metrics = ovr_metrics(ConfusionMatrix(np.array([[5, 1], [2, 4]])))
        self.assertAlmostEqual(metrics.f1[0], 50 / 65)
        self.assertAlmostEqual(metrics.f1[1], 0.7272727272727273)
        self.assertAlmostEqual(metrics.mean_f1, (50 / 65 + 8 / 11) / 2)
        self.assertAlmostEqual(metrics.mean_f1, 0.7483, places=4)
        self.assertAlmostEqual(metrics.accuracy, 9 / 12)

    def test_perfect_diagonal(self):
        metrics = ovr_metrics(ConfusionMatrix(np.diag([4, 2, 7])))
        for values in (metrics.precision, metrics.recall, metrics.f1):
            self.assertEqual(values, (1.0, 1.0, 1.0))
        self.assertEqual(metrics.mean_f1, 1.0)
        self.assertEqual(metrics.accuracy, 1.0)

    def test_absent_class_counts_as_zero(self):
        metrics = ovr_metrics(ConfusionMatrix(np.diag([2, 3, 0])))
        self.assertEqual(metrics.f1[2], 0.0)
        self.assertEqual(metrics.precision[2], 0.0)
        self.assertEqual(metrics.recall[2], 0.0)
        self.assertAlmostEqual(metrics.mean_f1, 2 / 3)

    def test_empty_matrix(self):
        with self.assertRaises(ValueError):
            ovr_metrics(ConfusionMatrix(np.zeros((2, 2), dtype=int)))

    def test_to_dict(self):
        metrics = ovr_metrics(ConfusionMatrix(np.array([[5, 1], [2, 4]])), Average.WEIGHTED)
        self.assertEqual(metrics.to_dict()["average"], "weighted")


def test_matches_brute_force_oracle() -> None:
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        counts = _random_counts(rng)
        metrics = ovr_metrics(ConfusionMatrix(counts))
        precision, recall, f1 = _brute_force(counts)
        assert list(metrics.precision) == precision
        assert list(metrics.recall) == recall
        assert list(metrics.f1) == f1
        assert metrics.mean_f1 == sum(f1) / len(f1)
        assert metrics.accuracy == np.trace(counts) / counts.sum()


def test_weighted_average_matches_sklearn() -> None:
    rng = np.random.default_rng(7)
    for _ in range(50):
        counts = _random_counts(rng)
        size = counts.shape[0]
        truths = np.repeat(np.repeat(np.arange(size), size), counts.ravel())
        preds = np.repeat(np.tile(np.arange(size), size), counts.ravel())
        p, r, f, _ = precision_recall_fscore_support(
            truths, preds, labels=np.arange(size), average="weighted", zero_division=0
        )
        metrics = ovr_metrics(ConfusionMatrix(counts), Average.WEIGHTED)
        assert metrics.mean_precision == pytest.approx(p, abs=1e-12)
        assert metrics.mean_recall == pytest.approx(r, abs=1e-12)
        assert metrics.mean_f1 == pytest.approx(f, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_macro_f1_is_invariant_under_relabeling(seed: int) -> None:
    rng = np.random.default_rng(seed)
    counts = _random_counts(rng)
    perm = rng.permutation(counts.shape[0])
    original = ovr_metrics(ConfusionMatrix(counts))
    relabeled = ovr_metrics(ConfusionMatrix(counts[np.ix_(perm, perm)]))
    np.testing.assert_array_equal(np.array(relabeled.f1), np.array(original.f1)[perm])
    assert relabeled.mean_f1 == pytest.approx(original.mean_f1, abs=1e-12)
    assert relabeled.accuracy == original.accuracy


# ============================================================================
# ROC
# ============================================================================


def _scores(column: list[float]) -> np.ndarray:
    s = np.asarray(column)
    return np.stack([s, 1.0 - s], axis=1)


def _mann_whitney(scores: np.ndarray, positive: np.ndarray) -> float:
    pos, neg = scores[positive], scores[~positive]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


class TestRocAuc(unittest.TestCase):
    def test_perfect_separation(self):
        curve = roc_auc(_scores([0.9, 0.8, 0.3, 0.1]), np.array([0, 0, 1, 1]), 0)
        self.assertEqual(curve.auc, 1.0)

    def test_all_ties(self):
        curve = roc_auc(_scores([0.5, 0.5, 0.5, 0.5]), np.array([0, 0, 1, 1]), 0)
        self.assertEqual(curve.auc, 0.5)

    def test_partial_tie(self):
        curve = roc_auc(_scores([0.9, 0.4, 0.4, 0.1]), np.array([0, 0, 1, 1]), 0)
        self.assertAlmostEqual(curve.auc, 0.875)
        # ties share one threshold: three distinct scores plus the leading one
        self.assertEqual(len(curve.thresholds), 4)
        self.assertEqual((curve.fpr[0], curve.tpr[0]), (0.0, 0.0))
        self.assertEqual((curve.fpr[-1], curve.tpr[-1]), (1.0, 1.0))

    def test_other_class(self):
        curve = roc_auc(_scores([0.9, 0.8, 0.3, 0.1]), np.array([0, 0, 1, 1]), 1)
        self.assertEqual(curve.auc, 1.0)

    def test_absent_class_is_missing(self):
        scores = np.full((4, 3), 1 / 3)
        self.assertIsNone(roc_auc(scores, np.array([0, 0, 1, 1]), 2).auc)
        self.assertIsNone(roc_auc(scores, np.array([2, 2, 2, 2]), 2).auc)

    def test_bad_arguments(self):
        with self.assertRaises(ValueError):
            roc_auc(np.zeros((3, 2)), np.array([0, 1]), 0)
        with self.assertRaises(ValueError):
            roc_auc(np.zeros((2, 2)), np.array([0, 1]), 2)


def test_auc_matches_pair_counting() -> None:
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(4, 40))
        size = int(rng.integers(2, 5))
        truths = rng.integers(0, size, n)
        truths[:2] = [0, 1]
        probabilities = rng.dirichlet(np.ones(size), size=n)
        # coarse rounding produces ties
        probabilities = np.round(probabilities, 1)
        k = int(rng.integers(0, 2))
        curve = roc_auc(probabilities, truths, k)
        expected = _mann_whitney(probabilities[:, k], truths == k)
        assert abs(curve.auc - expected) < 1e-9
