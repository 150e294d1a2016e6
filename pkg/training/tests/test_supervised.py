import unittest

import numpy as np
import pytest

from data.synthetic import SyntheticConfig, synth_paired_dataset
from data.windows import LabeledWindows
from model.convlstm import ModelMeta, classifier_names, embedder_names, init_model
from training.config import TrainConfig
from training.supervised import (
    accuracy,
    holdout_split,
    mean_cross_entropy,
    subsample,
    subset_size,
    train_supervised,
)

TINY = {"window_length": 16, "conv_filters": 3, "kernel_size": 3, "hidden_size": 4}
QUICK = TrainConfig(batch_size=8, max_epochs=3, patience=2, dropout=0.0)


def _labeled(
    windows_per_class: int = 12, separation: float = 1.0, seed: int = 0, noise: float = 0.05
):
    config = SyntheticConfig(
        num_classes=2,
        windows_per_class=windows_per_class,
        source_channels=3,
        target_channels=3,
        latent_dim=2,
        window_length=16,
        mean_separation=separation,
        noise=noise,
    )
    return synth_paired_dataset(config, seed).source_windows()


def _model(seed: int = 0, **overrides):
    widths = {**TINY, **overrides}
    return init_model(ModelMeta(in_channels=3, num_classes=2, **widths), seed)


def _assert_same_arrays(a, b) -> None:
    arrays_a, arrays_b = a.arrays(), b.arrays()
    assert arrays_a.keys() == arrays_b.keys()
    for name in arrays_a:
        np.testing.assert_array_equal(arrays_a[name], arrays_b[name], err_msg=name)


class TestSubsample(unittest.TestCase):
    def setUp(self):
        self.data = LabeledWindows(
            np.arange(300, dtype=np.float32).reshape(300, 1, 1),
            np.zeros(300, dtype=np.int64),
            ("a",),
        )

    def test_full_fraction_is_identity(self):
        self.assertIs(subsample(self.data, 1.0, seed=3), self.data)

    def test_size_and_order(self):
        picked = subsample(self.data, 0.33, seed=0)
        self.assertEqual(len(picked), 99)
        values = picked.windows[:, 0, 0]
        self.assertTrue(np.all(np.diff(values) > 0))

    def test_seeded(self):
        a = subsample(self.data, 0.15, seed=1).windows
        b = subsample(self.data, 0.15, seed=1).windows
        c = subsample(self.data, 0.15, seed=2).windows
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))

    def test_invalid_fraction(self):
        for fraction in (0.0, -0.5, 1.01):
            with self.assertRaises(ValueError):
                subsample(self.data, fraction, seed=0)


def test_subset_size_rounds_half_up() -> None:
    assert subset_size(300, 0.15) == 45
    assert subset_size(10, 0.25) == 3
    assert subset_size(3, 0.1) == 0


def test_holdout_split() -> None:
    train, val = holdout_split(100, 0.1, seed=0)
    assert len(val) == 10
    assert len(train) == 90
    assert sorted(np.concatenate([train, val]).tolist()) == list(range(100))

    _, val = holdout_split(3, 0.1, seed=0)
    assert len(val) == 1
    _, val = holdout_split(1, 0.1, seed=0)
    assert len(val) == 0
    _, val = holdout_split(50, 0.0, seed=0)
    assert len(val) == 0


def test_mean_cross_entropy() -> None:
    probabilities = np.array([[0.5, 0.5], [0.25, 0.75]])
    assert mean_cross_entropy(probabilities, np.array([0, 1])) == pytest.approx(
        -(np.log(0.5) + np.log(0.75)) / 2
    )
    assert mean_cross_entropy(probabilities[:0], np.array([], dtype=np.int64)) == 0.0


class TestTrainSupervised(unittest.TestCase):
    def setUp(self):
        self.data = _labeled()

    def test_zero_learning_rate_keeps_parameters(self):
        init = _model()
        model, history = train_supervised(init, self.data, QUICK.replace(learning_rate=0.0))
        _assert_same_arrays(model, init)
        self.assertEqual(history.best_epoch, 0)

    def test_deterministic(self):
        config = QUICK.replace(seed=4, dropout=0.5)
        a, history_a = train_supervised(_model(), self.data, config)
        b, history_b = train_supervised(_model(), self.data, config)
        _assert_same_arrays(a, b)
        self.assertEqual(history_a, history_b)

    def test_history(self):
        config = QUICK.replace(max_epochs=4, patience=10)
        _, history = train_supervised(_model(), self.data, config)
        self.assertEqual(history.epochs_run, 4)
        self.assertEqual(len(history.train_loss), 4)
        best = history.best_so_far()
        self.assertEqual(len(best), 5)
        self.assertTrue(all(later <= earlier for earlier, later in zip(best, best[1:])))
        self.assertLessEqual(history.best_validation_loss, history.initial_validation_loss)
        self.assertEqual(history.best_validation_loss, best[-1])

    def test_head_only_training_freezes_embedder(self):
        init = _model()
        config = QUICK.replace(learning_rate=0.05)
        model, _ = train_supervised(init, self.data, config, trainable=classifier_names(init.meta))
        for name in embedder_names(init.meta):
            np.testing.assert_array_equal(model.arrays()[name], init.arrays()[name])

    def test_zero_epochs(self):
        init = _model()
        model, history = train_supervised(init, self.data, QUICK.replace(max_epochs=0))
        _assert_same_arrays(model, init)
        self.assertEqual(history.epochs_run, 0)

    def test_empty_data(self):
        empty = LabeledWindows(
            np.zeros((0, 3, 16), dtype=np.float32), np.zeros(0, dtype=np.int64), ("a", "b")
        )
        with self.assertRaises(ValueError):
            train_supervised(_model(), empty, QUICK)
        with self.assertRaises(ValueError):
            accuracy(_model(), empty)

    def test_class_count_mismatch(self):
        data = LabeledWindows(self.data.windows, self.data.labels, ("a", "b", "c"))
        with self.assertRaises(ValueError):
            train_supervised(_model(), data, QUICK)

    def test_channel_mismatch(self):
        data = LabeledWindows(self.data.windows[:, :2], self.data.labels, self.data.class_names)
        with self.assertRaises(ValueError):
            train_supervised(_model(), data, QUICK)


@pytest.mark.slow
def test_learns_separable_classes() -> None:
    data = _labeled(windows_per_class=40, separation=3.0)
    init = _model(seed=1, conv_filters=8, hidden_size=8)
    config = TrainConfig(learning_rate=1e-2, batch_size=16, max_epochs=40, patience=40, dropout=0.0)
    model, history = train_supervised(init, data, config)
    assert history.best_validation_loss < history.initial_validation_loss
    assert accuracy(model, data) >= 0.75


@pytest.mark.slow
def test_fits_noise_free_classes() -> None:
    data = _labeled(windows_per_class=20, noise=0.0)
    init = _model(seed=2, conv_filters=8, hidden_size=8)
    config = TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=50, patience=50, dropout=0.0)
    model, history = train_supervised(init, data, config)
    assert history.epochs_run <= 50
    assert accuracy(model, data) >= 0.99
