import unittest

import numpy as np
import pytest

from data.descriptor import FIVE_CLASS_NAMES, descriptor_from_dict
from data.recording import Recording
from data.windows import (
    PairedWindows,
    class_distribution,
    fit_channel_stats,
    majority_label,
    partition_sizes,
    split,
    split_codes,
    standardize_pairs,
    windowize,
)

SCHEME = descriptor_from_dict(
    {
        "dataset_id": "toy",
        "sample_rate": 30.0,
        "column_count": 6,
        "label_column": 5,
        "labels": {0: "other", 1: "sitting", 2: "walking"},
        "five_class": {"sitting": "sit", "walking": "walk"},
        "sites": {"wrist": {"columns": [0, 1]}, "chest": {"columns": [2, 3, 4]}},
        "source_site": "wrist",
        "target_site": "chest",
    }
).label_scheme("five_class")
SIT = FIVE_CLASS_NAMES.index("sit")
WALK = FIVE_CLASS_NAMES.index("walk")


def _recording(n: int, labels: np.ndarray, subject: str = "1") -> Recording:
    t = np.arange(n, dtype=np.float64) / 30.0
    return Recording(
        dataset_id="toy",
        subject=subject,
        sample_rate=30.0,
        timestamps=t,
        channels={"wrist": np.vstack([t, -t]), "chest": np.vstack([t, 2 * t, 3 * t])},
        labels=labels,
        units_converted=True,
    )


def _pairs(n: int, subjects=None, seed: int = 0) -> PairedWindows:
    rng = np.random.default_rng(seed)
    return PairedWindows(
        source=rng.normal(size=(n, 2, 100)).astype(np.float32),
        target=rng.normal(loc=3.0, scale=2.0, size=(n, 3, 100)).astype(np.float32),
        labels=rng.integers(0, 5, size=n),
        pair_ids=np.arange(n, dtype=np.int64),
        subjects=np.asarray(subjects if subjects is not None else ["s"] * n, dtype=object),
        start_times=np.arange(n, dtype=np.float64) * 100 / 30,
        class_names=FIVE_CLASS_NAMES,
        source_site="wrist",
        target_site="chest",
    )


class TestWindowize(unittest.TestCase):
    def setUp(self):
        labels = np.zeros(330, dtype=np.int64)
        labels[:100] = 1
        labels[100:160] = 2
        labels[250:300] = 1
        self.recording = _recording(330, labels)

    def test_consecutive_windows_and_majority_labels(self):
        windows = windowize(self.recording, SCHEME, "wrist", "chest")
        self.assertEqual(len(windows), 3)
        self.assertEqual(windows.source.shape, (3, 2, 100))
        self.assertEqual(windows.target.shape, (3, 3, 100))
        self.assertEqual(windows.source.dtype, np.float32)
        # third window is a 50/50 tie between other (0) and sit (1)
        self.assertEqual(windows.labels.tolist(), [SIT, WALK, 0])
        self.assertEqual(windows.pair_ids.tolist(), [0, 1, 2])
        np.testing.assert_allclose(windows.start_times, [0.0, 100 / 30, 200 / 30])
        np.testing.assert_allclose(
            windows.source[1, 0], self.recording.timestamps[100:200], rtol=1e-6
        )

    def test_windows_with_missing_samples_are_dropped(self):
        channels = dict(self.recording.channels)
        chest = channels["chest"].copy()
        chest[2, 150] = np.nan
        channels["chest"] = chest
        rec = Recording(
            dataset_id="toy",
            subject="1",
            sample_rate=30.0,
            timestamps=self.recording.timestamps,
            channels=channels,
            labels=self.recording.labels,
        )
        windows = windowize(rec, SCHEME, "wrist", "chest", first_pair_id=10)
        self.assertEqual(windows.pair_ids.tolist(), [10, 12])

    def test_too_short_recording_gives_no_windows(self):
        rec = _recording(99, np.zeros(99, dtype=np.int64))
        windows = windowize(rec, SCHEME, "wrist", "chest")
        self.assertEqual(len(windows), 0)
        self.assertEqual(windows.source.shape, (0, 2, 100))


def test_majority_label_breaks_ties_toward_smaller_index() -> None:
    assert majority_label(np.array([1, 1, 2, 2]), 5) == 1
    assert majority_label(np.array([4, 4, 4, 0]), 5) == 4


def test_partition_sizes() -> None:
    assert partition_sizes(10) == (3, 5, 2)
    assert partition_sizes(4) == (1, 2, 1)
    assert sum(partition_sizes(1001)) == 1001


@pytest.mark.parametrize("n", [3, 5])
def test_partition_sizes_reject_an_empty_partition(n) -> None:
    with pytest.raises(ValueError, match="empty"):
        partition_sizes(n)
    with pytest.raises(ValueError, match="empty"):
        split(_pairs(n))


def test_split_sizes_and_disjointness() -> None:
    windows = _pairs(10)
    result = split(windows, seed=4)
    assert result.sizes() == (3, 5, 2)
    ids = [set(part.pair_ids.tolist()) for part in result.partitions().values()]
    assert set.union(*ids) == set(range(10))
    assert sum(len(s) for s in ids) == 10


def test_split_is_deterministic_and_order_independent() -> None:
    windows = _pairs(50)
    shuffled = windows.take(np.random.default_rng(1).permutation(50))
    np.testing.assert_array_equal(
        split(windows, seed=7).adapt.pair_ids, split(shuffled, seed=7).adapt.pair_ids
    )


def test_different_seeds_give_different_splits() -> None:
    windows = _pairs(1000)
    a = split(windows, seed=1).train_source.pair_ids
    b = split(windows, seed=2).train_source.pair_ids
    assert set(a.tolist()) != set(b.tolist())


def test_split_needs_three_windows() -> None:
    with pytest.raises(ValueError, match="at least 3"):
        split(_pairs(2))
    with pytest.raises(ValueError, match="proportions"):
        split(_pairs(10), proportions=(0.5, 0.5, 0.5))


def test_subject_split_keeps_subjects_whole() -> None:
    subjects = [f"s{i % 6}" for i in range(60)]
    codes = split_codes(_pairs(60, subjects), seed=3, by_subject=True)
    for subject in set(subjects):
        members = np.array([s == subject for s in subjects])
        assert len(set(codes[members].tolist())) == 1

    with pytest.raises(ValueError, match="3 subjects"):
        split_codes(_pairs(10, ["a"] * 5 + ["b"] * 5), by_subject=True)


def test_swapped_split_exchanges_sites() -> None:
    result = split(_pairs(10), seed=0)
    swapped = result.swapped()
    assert swapped.adapt.source_site == "chest"
    np.testing.assert_array_equal(swapped.adapt.source, result.adapt.target)


def test_strip_labels_keeps_pairs() -> None:
    windows = _pairs(5)
    pairs = windows.strip_labels()
    assert not hasattr(pairs, "labels")
    np.testing.assert_array_equal(pairs.pair_ids, windows.pair_ids)
    assert len(pairs.take(np.array([0, 2]))) == 2


def test_concat_rejects_mismatched_sites() -> None:
    a = _pairs(3)
    b = _pairs(3).swapped()
    with pytest.raises(ValueError):
        PairedWindows.concat([a, b])
    assert len(PairedWindows.concat([a, a])) == 6


def test_class_distribution_table() -> None:
    table = class_distribution(np.array([0, 0, 0, 4]), FIVE_CLASS_NAMES)
    assert table["count"].tolist() == [3, 0, 0, 0, 1]
    assert table["fraction"].sum() == pytest.approx(1.0)
    assert table.loc[0, "class_name"] == "other"


def test_standardization_uses_training_partitions() -> None:
    standardized, stats = standardize_pairs(split(_pairs(200), seed=0))
    train = standardized.train_source.source.astype(np.float64)
    np.testing.assert_allclose(train.mean(axis=(0, 2)), 0.0, atol=1e-5)
    np.testing.assert_allclose(train.std(axis=(0, 2)), 1.0, atol=1e-4)
    adapt_target = standardized.adapt.target.astype(np.float64)
    np.testing.assert_allclose(adapt_target.mean(axis=(0, 2)), 0.0, atol=1e-5)
    assert stats["target"].mean.shape == (3,)
    assert np.all(np.abs(stats["target"].mean - 3.0) < 0.1)


def test_constant_channel_gets_unit_std() -> None:
    stats = fit_channel_stats(np.ones((4, 2, 10)))
    np.testing.assert_array_equal(stats.std, [1.0, 1.0])
    with pytest.raises(ValueError):
        fit_channel_stats(np.zeros((0, 2, 10)))
