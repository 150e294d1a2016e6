import unittest

import numpy as np
import pytest

from numerics.optim import (
    DEFAULT_EPSILON,
    DEFAULT_LEARNING_RATE,
    DEFAULT_RHO,
    RmspropState,
    clip_by_global_norm,
    global_norm,
    rmsprop_step,
)
from numerics.tensor import NonFiniteError, ShapeError


def _state(params, rho=0.9, learning_rate=0.1, epsilon=0.0):
    return RmspropState.zeros_like(params, rho=rho, learning_rate=learning_rate, epsilon=epsilon)


class TestRmspropStep(unittest.TestCase):
    def test_single_step_from_zero_state(self):
        params = {"p": np.zeros(1, dtype=np.float32)}
        new_params, state = rmsprop_step(params, {"p": np.ones(1)}, _state(params))
        self.assertAlmostEqual(float(state.accumulators["p"][0]), 0.1, places=6)
        self.assertAlmostEqual(float(new_params["p"][0]), -0.31623, places=5)

    def test_zero_gradient_leaves_params_and_decays_accumulator(self):
        params = {"p": np.array([1.5, -2.0], dtype=np.float32)}
        state = RmspropState(
            {"p": np.array([0.5, 0.25], dtype=np.float32)}, rho=0.9, learning_rate=0.1
        )
        new_params, new_state = rmsprop_step(params, {"p": np.zeros(2)}, state)
        np.testing.assert_array_equal(new_params["p"], params["p"])
        np.testing.assert_allclose(new_state.accumulators["p"], [0.45, 0.225], rtol=1e-6)

    def test_two_constant_steps_accumulate(self):
        params = {"p": np.zeros(3, dtype=np.float32)}
        state = _state(params)
        grads = {"p": np.ones(3)}
        params, state = rmsprop_step(params, grads, state)
        params, state = rmsprop_step(params, grads, state)
        np.testing.assert_allclose(state.accumulators["p"], 0.19, rtol=1e-6)

    def test_inputs_are_not_mutated(self):
        params = {"p": np.ones(2, dtype=np.float32)}
        state = _state(params)
        rmsprop_step(params, {"p": np.ones(2)}, state)
        np.testing.assert_array_equal(params["p"], [1.0, 1.0])
        np.testing.assert_array_equal(state.accumulators["p"], [0.0, 0.0])

    def test_zero_learning_rate_is_a_no_op(self):
        params = {"p": np.array([0.3, 0.7], dtype=np.float32)}
        state = _state(params, learning_rate=0.0, epsilon=1e-8)
        new_params, _ = rmsprop_step(params, {"p": np.array([5.0, -1.0])}, state)
        np.testing.assert_array_equal(new_params["p"], params["p"])

    def test_errors(self):
        params = {"p": np.zeros(2, dtype=np.float32)}
        state = _state(params)
        with self.assertRaises(NonFiniteError):
            rmsprop_step(params, {"p": np.array([np.inf, 0.0])}, state)
        with self.assertRaises(ShapeError):
            rmsprop_step(params, {"p": np.zeros(3)}, state)
        with self.assertRaises(KeyError):
            rmsprop_step(params, {}, state)

    def test_rejects_bad_hyperparameters(self):
        with self.assertRaises(ValueError):
            RmspropState({}, rho=1.0)
        with self.assertRaises(ValueError):
            RmspropState({}, learning_rate=-1.0)


def test_defaults() -> None:
    state = RmspropState()
    assert (state.rho, state.epsilon, state.learning_rate) == (
        DEFAULT_RHO,
        DEFAULT_EPSILON,
        DEFAULT_LEARNING_RATE,
    )
    assert (DEFAULT_RHO, DEFAULT_EPSILON, DEFAULT_LEARNING_RATE) == (0.9, 1e-8, 1e-3)


@pytest.mark.parametrize("scale", [0.01, 1.0, 7.5, 300.0])
def test_loss_scaling_keeps_update_sign_pattern(scale: float) -> None:
    rng = np.random.default_rng(5)
    params = {"w": rng.normal(size=(4, 3)).astype(np.float32)}
    grad = rng.normal(size=(4, 3)).astype(np.float32)

    base, _ = rmsprop_step(params, {"w": grad}, RmspropState.zeros_like(params))
    scaled, _ = rmsprop_step(params, {"w": grad * scale}, RmspropState.zeros_like(params))
    np.testing.assert_array_equal(
        np.sign(base["w"] - params["w"]), np.sign(scaled["w"] - params["w"])
    )


def test_accumulators_stay_non_negative() -> None:
    rng = np.random.default_rng(9)
    params = {"w": np.zeros(10, dtype=np.float32)}
    state = RmspropState.zeros_like(params)
    for _ in range(20):
        params, state = rmsprop_step(params, {"w": rng.normal(size=10)}, state)
        assert np.all(state.accumulators["w"] >= 0)


def test_clip_rescales_to_max_norm() -> None:
    grads = {"a": np.array([3.0, 0.0], dtype=np.float32), "b": np.array([4.0], dtype=np.float32)}
    clipped, norm = clip_by_global_norm(grads, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    assert global_norm(clipped) == pytest.approx(1.0, rel=1e-6)
    np.testing.assert_allclose(clipped["a"], [0.6, 0.0], rtol=1e-6)


def test_clip_below_threshold_or_disabled_is_identity() -> None:
    grads = {"a": np.array([3.0, 4.0], dtype=np.float32)}
    for max_norm in (10.0, None):
        clipped, norm = clip_by_global_norm(grads, max_norm=max_norm)
        assert norm == pytest.approx(5.0)
        np.testing.assert_array_equal(clipped["a"], grads["a"])
