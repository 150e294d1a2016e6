import unittest

import numpy as np
import pytest

from data.synthetic import SyntheticConfig, synth_paired_dataset
from data.windows import UnlabeledPairs
from model.convlstm import (
    Domain,
    ModelMeta,
    classifier_names,
    embedder_names,
    init_model,
    predict,
)
from training.adapt import (
    AdaptReport,
    adapt_unsupervised,
    fine_tune_head,
    random_target,
    untrained_target,
)
from training.config import LossKind, LossSpec, Regularization, TrainConfig
from training.supervised import accuracy, train_supervised

TINY = {"window_length": 16, "conv_filters": 3, "kernel_size": 3, "hidden_size": 4}
QUICK = TrainConfig(batch_size=8, max_epochs=3, patience=10)


def _paired(target_channels: int = 3, per_class: int = 12, seed: int = 0):
    config = SyntheticConfig(
        num_classes=2,
        windows_per_class=per_class,
        source_channels=3,
        target_channels=target_channels,
        latent_dim=2,
        window_length=16,
    )
    return synth_paired_dataset(config, seed)


def _source(seed: int = 0):
    return init_model(ModelMeta(in_channels=3, num_classes=2, **TINY), seed)


class TestAdaptUnsupervised(unittest.TestCase):
    def setUp(self):
        self.source = _source()
        self.paired = _paired()
        self.pairs = self.paired.strip_labels()

    def test_rejects_labeled_pairs(self):
        with self.assertRaises(TypeError):
            adapt_unsupervised(self.source, self.paired, LossSpec(), QUICK)

    def test_rejects_empty_pairs(self):
        empty = UnlabeledPairs(
            np.zeros((0, 3, 16), np.float32),
            np.zeros((0, 3, 16), np.float32),
            np.zeros(0, np.int64),
        )
        with self.assertRaises(ValueError):
            adapt_unsupervised(self.source, empty, LossSpec(), QUICK)

    def test_source_is_untouched(self):
        before = {name: array.copy() for name, array in self.source.arrays().items()}
        adapt_unsupervised(self.source, self.pairs, LossSpec(LossKind.MSE), QUICK)
        for name, array in self.source.arrays().items():
            np.testing.assert_array_equal(array, before[name], err_msg=name)

    def test_classifier_is_transplanted(self):
        adapted, _ = adapt_unsupervised(self.source, self.pairs, LossSpec(LossKind.MSE), QUICK)
        self.assertIs(adapted.meta.domain, Domain.TARGET)
        for name in classifier_names(self.source.meta):
            np.testing.assert_array_equal(adapted.arrays()[name], self.source.arrays()[name])

    def test_report(self):
        spec = LossSpec(LossKind.MAE, Regularization.L2)
        _, report = adapt_unsupervised(self.source, self.pairs, spec, QUICK)
        self.assertEqual(report.epochs_run, 3)
        self.assertEqual(len(report.trajectory), 3)
        self.assertEqual(report.loss, "MAE + L2 reg")
        self.assertLessEqual(report.final_loss, report.initial_loss)
        self.assertEqual(report.to_dict()["trajectory"], list(report.trajectory))

    def test_identical_sites(self):
        same = UnlabeledPairs(self.pairs.source, self.pairs.source.copy(), self.pairs.pair_ids)
        adapted, report = adapt_unsupervised(self.source, same, LossSpec(LossKind.MAE), QUICK)
        self.assertLess(report.final_loss, 1e-3)
        agreement = np.mean(predict(adapted, same.target) == predict(self.source, same.source))
        self.assertGreaterEqual(agreement, 0.99)

    def test_different_channel_count(self):
        pairs = _paired(target_channels=5).strip_labels()
        adapted, _ = adapt_unsupervised(self.source, pairs, LossSpec(LossKind.COSINE), QUICK)
        self.assertEqual(adapted.meta.in_channels, 5)
        self.assertEqual(predict(adapted, pairs.target).shape, (len(pairs),))

    def test_zero_learning_rate_gives_untrained_target(self):
        config = QUICK.replace(learning_rate=0.0, seed=2)
        adapted, report = adapt_unsupervised(self.source, self.pairs, LossSpec(), config)
        untrained = untrained_target(self.source, 3, seed=2)
        for name in embedder_names(self.source.meta):
            np.testing.assert_array_equal(adapted.arrays()[name], untrained.arrays()[name])
        self.assertEqual(report.best_epoch, 0)

    def test_fraction(self):
        config = QUICK.replace(fraction=0.5, max_epochs=1)
        adapted, _ = adapt_unsupervised(self.source, self.pairs, LossSpec(), config)
        self.assertEqual(adapted.meta.in_channels, 3)


def test_untrained_target_matches_source_when_channels_agree() -> None:
    source = _source()
    target = untrained_target(source, 3)
    for name, array in source.arrays().items():
        np.testing.assert_array_equal(target.arrays()[name], array)


def test_untrained_target_reinitializes_first_convolution() -> None:
    source = _source()
    target = untrained_target(source, 6, seed=1)
    assert target.arrays()["embedder.conv0.kernel"].shape[1] == 6
    np.testing.assert_array_equal(
        target.arrays()["embedder.lstm0.w_ih"], source.arrays()["embedder.lstm0.w_ih"]
    )


def test_random_target_keeps_only_the_head() -> None:
    source = _source()
    target = random_target(source, 3, seed=9)
    assert not np.array_equal(
        target.arrays()["embedder.conv1.kernel"], source.arrays()["embedder.conv1.kernel"]
    )
    np.testing.assert_array_equal(target.classifier.weight, source.classifier.weight)


def test_fine_tune_head_freezes_embedder() -> None:
    source = _source()
    paired = _paired()
    adapted = untrained_target(source, 3)
    tuned, history = fine_tune_head(adapted, paired.target_windows(), QUICK)
    for name in embedder_names(source.meta):
        np.testing.assert_array_equal(tuned.arrays()[name], adapted.arrays()[name])
    assert history.epochs_run == 3


def test_report_checks_trajectory_length() -> None:
    with pytest.raises(ValueError):
        AdaptReport(final_loss=0.1, trajectory=(0.2, 0.1), epochs_run=3)


@pytest.mark.slow
def test_replication_reduces_the_gap() -> None:
    paired = _paired(per_class=40, seed=5)
    supervised = TrainConfig(
        learning_rate=1e-2, batch_size=16, max_epochs=30, patience=30, dropout=0.0
    )
    source, _ = train_supervised(_source(seed=3), paired.source_windows(), supervised)
    target = paired.target_windows()
    moved = accuracy(untrained_target(source, 3), target)

    config = TrainConfig(learning_rate=1e-2, batch_size=16, max_epochs=30, patience=30)
    adapted, report = adapt_unsupervised(
        source, paired.strip_labels(), LossSpec(LossKind.MSE), config
    )
    assert report.final_loss < report.initial_loss
    assert accuracy(adapted, target) >= moved + 0.2
