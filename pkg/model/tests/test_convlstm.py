import dataclasses
import unittest

import numpy as np
import pytest

from model.convlstm import (
    CONV_FILTERS,
    HIDDEN_SIZE,
    Domain,
    ModelMeta,
    ModelParams,
    classify,
    classify_batch,
    dropout_mask,
    embed,
    embed_batch,
    embedder_kernel_names,
    embedder_names,
    head_probabilities,
    init_model,
    init_target_from_source,
    parameter_shapes,
    predict,
    random_target_model,
    transplant_classifier,
)
from numerics.tensor import ShapeError, softmax_array

SMALL = {"conv_filters": 8, "kernel_size": 5, "hidden_size": 12}


def _window(channels: int, length: int = 100, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(channels, length)).astype(np.float32)


def _zero_model(meta: ModelMeta) -> ModelParams:
    return ModelParams.from_arrays(
        meta, {name: np.zeros(shape) for name, shape in parameter_shapes(meta).items()}
    )


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _straight_line_embedding(model: ModelParams, window: np.ndarray) -> np.ndarray:
    """Loop-by-loop float64 forward pass of the same architecture."""
    arrays = {name: a.astype(np.float64) for name, a in model.arrays().items()}
    x = window.astype(np.float64)
    for layer in range(4):
        kernel = arrays[f"embedder.conv{layer}.kernel"]
        bias = arrays[f"embedder.conv{layer}.bias"]
        filters, _, width = kernel.shape
        steps = x.shape[1] - width + 1
        out = np.empty((filters, steps))
        for f in range(filters):
            for t in range(steps):
                out[f, t] = np.sum(kernel[f] * x[:, t : t + width]) + bias[f]
        x = np.maximum(out, 0.0)

    sequence = [x[:, t] for t in range(x.shape[1])]
    hidden = model.meta.hidden_size
    for layer in range(2):
        w_ih = arrays[f"embedder.lstm{layer}.w_ih"]
        w_hh = arrays[f"embedder.lstm{layer}.w_hh"]
        b = arrays[f"embedder.lstm{layer}.bias"]
        h = np.zeros(hidden)
        c = np.zeros(hidden)
        outputs = []
        for x_t in sequence:
            z = w_ih @ x_t + w_hh @ h + b
            i = _sigmoid(z[:hidden])
            f = _sigmoid(z[hidden : 2 * hidden])
            g = np.tanh(z[2 * hidden : 3 * hidden])
            o = _sigmoid(z[3 * hidden :])
            c = f * c + i * g
            h = o * np.tanh(c)
            outputs.append(h)
        sequence = outputs
    return sequence[-1]


class TestModelMeta(unittest.TestCase):
    def test_reference_widths_are_defaults(self):
        meta = ModelMeta(in_channels=9, num_classes=5)
        self.assertEqual((meta.conv_filters, meta.hidden_size), (CONV_FILTERS, HIDDEN_SIZE))
        self.assertEqual(meta.lstm_steps, 84)
        self.assertEqual(meta.embedding_dim, 128)
        meta.validate_reference_architecture()

    def test_reduced_widths_fail_reference_check(self):
        meta = ModelMeta(in_channels=9, num_classes=5, **SMALL)
        with self.assertRaises(ValueError):
            meta.validate_reference_architecture()

    def test_window_too_short(self):
        with self.assertRaises(ValueError):
            ModelMeta(in_channels=3, num_classes=2, window_length=16)

    def test_dict_round_trip(self):
        meta = ModelMeta(in_channels=3, num_classes=4, domain="target", **SMALL)
        self.assertIs(meta.domain, Domain.TARGET)
        self.assertEqual(ModelMeta.from_dict(meta.to_dict()), meta)
        with self.assertRaises(ValueError):
            ModelMeta.from_dict({**meta.to_dict(), "dropout": 0.5})


class TestParams(unittest.TestCase):
    def test_shapes_follow_channel_count(self):
        shapes = parameter_shapes(ModelMeta(in_channels=3, num_classes=5))
        self.assertEqual(shapes["embedder.conv0.kernel"], (64, 3, 5))
        self.assertEqual(shapes["embedder.conv3.kernel"], (64, 64, 5))
        self.assertEqual(shapes["embedder.lstm0.w_ih"], (512, 64))
        self.assertEqual(shapes["embedder.lstm1.w_hh"], (512, 128))
        self.assertEqual(shapes["classifier.weight"], (5, 128))
        self.assertEqual(len(embedder_names(ModelMeta(3, 5))), 8 + 6)
        self.assertEqual(len(embedder_kernel_names(ModelMeta(3, 5))), 4 + 4)

    def test_arrays_are_read_only(self):
        model = init_model(ModelMeta(in_channels=3, num_classes=2, **SMALL), seed=0)
        with self.assertRaises(ValueError):
            model.classifier.weight[0, 0] = 1.0

    def test_meta_must_match_shapes(self):
        meta = ModelMeta(in_channels=3, num_classes=2, **SMALL)
        arrays = init_model(meta, seed=0).arrays()
        with self.assertRaises(ShapeError):
            ModelParams.from_arrays(dataclasses.replace(meta, num_classes=3), arrays)

    def test_init_is_seeded_and_sets_forget_bias(self):
        meta = ModelMeta(in_channels=3, num_classes=2, **SMALL)
        a, b = init_model(meta, seed=4).arrays(), init_model(meta, seed=4).arrays()
        for name in a:
            self.assertEqual(a[name].tobytes(), b[name].tobytes())
        h = meta.hidden_size
        bias = a["embedder.lstm1.bias"]
        np.testing.assert_array_equal(bias[h : 2 * h], 1.0)
        np.testing.assert_array_equal(bias[:h], 0.0)
        bound = np.sqrt(1.0 / (3 * 5))
        self.assertLessEqual(np.abs(a["embedder.conv0.kernel"]).max(), bound)

    def test_with_arrays_replaces_only_named(self):
        model = init_model(ModelMeta(in_channels=3, num_classes=2, **SMALL), seed=1)
        updated = model.with_arrays({"classifier.bias": np.array([5.0, 6.0])})
        self.assertEqual(updated.classifier.bias.tolist(), [5.0, 6.0])
        self.assertIs(updated.meta, model.meta)
        with self.assertRaises(KeyError):
            model.with_arrays({"classifier.scale": np.ones(2)})


def test_zero_parameters_give_zero_embedding() -> None:
    model = _zero_model(ModelMeta(in_channels=9, num_classes=5))
    embedding = embed(model, _window(9))
    assert embedding.shape == (128,)
    assert not embedding.any()


def test_embedding_length_is_hidden_size_for_any_channel_count() -> None:
    for channels in (3, 9):
        model = init_model(ModelMeta(in_channels=channels, num_classes=5), seed=2)
        assert embed(model, _window(channels)).shape == (128,)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_embedding_matches_straight_line_forward_pass(seed: int) -> None:
    model = init_model(ModelMeta(in_channels=9, num_classes=5), seed=seed)
    window = _window(9, seed=100 + seed)
    np.testing.assert_allclose(
        embed(model, window), _straight_line_embedding(model, window), rtol=0, atol=2e-5
    )


def test_batched_and_single_embeddings_agree() -> None:
    model = init_model(ModelMeta(in_channels=3, num_classes=4, **SMALL), seed=3)
    windows = np.stack([_window(3, seed=s) for s in range(5)])
    batched = embed_batch(model, windows, batch_size=2)
    for i in range(5):
        np.testing.assert_allclose(batched[i], embed(model, windows[i]), atol=1e-6)


def test_window_shape_mismatch() -> None:
    model = init_model(ModelMeta(in_channels=9, num_classes=5, **SMALL), seed=0)
    with pytest.raises(ShapeError):
        embed(model, _window(3))
    with pytest.raises(ShapeError):
        embed(model, _window(9, length=90))


def test_zero_classifier_gives_uniform_distribution() -> None:
    meta = ModelMeta(in_channels=3, num_classes=5, **SMALL)
    model = init_model(meta, seed=0).with_arrays(
        {"classifier.weight": np.zeros((5, 12)), "classifier.bias": np.zeros(5)}
    )
    np.testing.assert_allclose(classify(model, _window(3)), np.full(5, 0.2), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_probabilities_are_normalized_and_monotone(seed: int) -> None:
    model = init_model(ModelMeta(in_channels=3, num_classes=5, **SMALL), seed=seed)
    windows = np.stack([_window(3, seed=seed * 10 + i) for i in range(8)])
    probs = classify_batch(model, windows)
    assert np.all((probs >= 0) & (probs <= 1))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    embeddings = embed_batch(model, windows)
    logits = embeddings @ model.classifier.weight.T + model.classifier.bias
    np.testing.assert_array_equal(np.argmax(probs, axis=1), np.argmax(logits, axis=1))
    np.testing.assert_array_equal(predict(model, windows), np.argmax(logits, axis=1))


def test_classify_is_softmax_of_head_on_embedding() -> None:
    model = init_model(ModelMeta(in_channels=3, num_classes=4, **SMALL), seed=5)
    windows = np.stack([_window(3, seed=i) for i in range(4)])
    embeddings = embed_batch(model, windows)
    expected = softmax_array(embeddings @ model.classifier.weight.T + model.classifier.bias)
    np.testing.assert_array_equal(classify_batch(model, windows), expected)
    np.testing.assert_array_equal(head_probabilities(model, embeddings), expected)


class TestTransplant(unittest.TestCase):
    def setUp(self):
        self.source = init_model(ModelMeta(in_channels=9, num_classes=5, **SMALL), seed=0)
        self.target = init_model(
            ModelMeta(in_channels=3, num_classes=5, domain=Domain.TARGET, **SMALL), seed=1
        )

    def test_classifier_is_bitwise_copy(self):
        moved = transplant_classifier(self.source, self.target)
        self.assertEqual(moved.classifier.weight.tobytes(), self.source.classifier.weight.tobytes())
        self.assertEqual(moved.classifier.bias.tobytes(), self.source.classifier.bias.tobytes())
        self.assertIs(moved.embedder, self.target.embedder)
        self.assertEqual(moved.meta, self.target.meta)

    def test_idempotent(self):
        once = transplant_classifier(self.source, self.target)
        twice = transplant_classifier(self.source, once)
        self.assertEqual(twice.meta, once.meta)
        for name, array in once.arrays().items():
            self.assertEqual(array.tobytes(), twice.arrays()[name].tobytes())

    def test_identical_embedders_classify_identically(self):
        twin = dataclasses.replace(
            init_model(self.source.meta, seed=9),
            embedder=self.source.embedder,
        )
        moved = transplant_classifier(self.source, twin)
        window = _window(9, seed=3)
        np.testing.assert_array_equal(embed(moved, window), embed(self.source, window))
        np.testing.assert_array_equal(classify(moved, window), classify(self.source, window))

    def test_class_count_mismatch(self):
        other = init_model(ModelMeta(in_channels=3, num_classes=4, **SMALL), seed=0)
        with self.assertRaises(ShapeError):
            transplant_classifier(self.source, other)

    def test_embedding_size_mismatch(self):
        other = init_model(
            ModelMeta(in_channels=3, num_classes=5, conv_filters=8, hidden_size=6), seed=0
        )
        with self.assertRaises(ShapeError):
            transplant_classifier(self.source, other)


class TestTargetInit(unittest.TestCase):
    def setUp(self):
        self.source = init_model(ModelMeta(in_channels=9, num_classes=5, **SMALL), seed=0)

    def test_same_channel_count_copies_everything(self):
        target = init_target_from_source(self.source, 9, seed=3)
        self.assertIs(target.meta.domain, Domain.TARGET)
        for name, array in self.source.arrays().items():
            self.assertEqual(array.tobytes(), target.arrays()[name].tobytes())

    def test_channel_change_reinitializes_only_first_conv(self):
        target = init_target_from_source(self.source, 3, seed=3)
        self.assertEqual(target.meta.in_channels, 3)
        self.assertEqual(target.arrays()["embedder.conv0.kernel"].shape, (8, 3, 5))
        for name, array in self.source.arrays().items():
            if name.startswith("embedder.conv0."):
                continue
            self.assertEqual(array.tobytes(), target.arrays()[name].tobytes())

    def test_random_target_carries_source_head(self):
        target = random_target_model(self.source, 3, seed=11)
        self.assertEqual(
            target.classifier.weight.tobytes(), self.source.classifier.weight.tobytes()
        )
        self.assertNotEqual(
            target.arrays()["embedder.lstm0.w_ih"].tobytes(),
            self.source.arrays()["embedder.lstm0.w_ih"].tobytes(),
        )


def test_dropout_mask_scales_kept_units() -> None:
    mask = dropout_mask(np.random.default_rng(0), (200, 16), rate=0.5)
    assert set(np.unique(mask).tolist()) <= {0.0, 2.0}
    assert 0.4 < float(np.mean(mask == 0.0)) < 0.6
    with pytest.raises(ValueError):
        dropout_mask(np.random.default_rng(0), (2,), rate=1.0)
