"""
Tests for Adagrad, train_step and end-to-end fitting on synthetic scenes.
"""

import math

import numpy as np
import pytest

from src.controllers.evaluation_controller import evaluate_frame
from src.utilities.errors import DataError, NumericalError, ParameterError
from src.utilities.metrics import ClassCounts, finalize
from src.utilities.network import GraphConfig, init_params, train_step
from src.utilities.optim import Adagrad
from src.utilities.synthetic import synthetic_frame
from src.utilities.tensor import Tensor

from .conftest import COMPACT_PROJECTION


class TestAdagrad:
    """Update rule and state handling."""

    def test_two_steps_of_unit_gradient(self):
        optimizer = Adagrad(lr=0.001)
        params = {"p/w": Tensor([1.0])}
        grads = {"p/w": np.array([1.0], np.float32)}
        state = optimizer.init_state(params)
        params, state = optimizer.apply(params, grads, state)
        assert params["p/w"].data[0] == pytest.approx(1.0 - 0.001, abs=1e-7)
        before = params["p/w"].data[0]
        params, state = optimizer.apply(params, grads, state)
        assert before - params["p/w"].data[0] == pytest.approx(0.001 / math.sqrt(2), rel=1e-3)
        assert state["p/w"][0] == pytest.approx(2.0)

    def test_inputs_are_not_modified(self):
        optimizer = Adagrad()
        params = {"p/w": Tensor([1.0, 2.0])}
        state = optimizer.init_state(params)
        optimizer.apply(params, {"p/w": np.ones(2, np.float32)}, state)
        np.testing.assert_array_equal(state["p/w"], [0.0, 0.0])
        np.testing.assert_array_equal(params["p/w"].data, [1.0, 2.0])

    def test_initial_accumulator(self):
        optimizer = Adagrad(lr=0.1, initial_accumulator=3.0)
        params = {"p/w": Tensor([0.0])}
        updated, _ = optimizer.apply(params, {"p/w": np.array([1.0], np.float32)}, optimizer.init_state(params))
        assert updated["p/w"].data[0] == pytest.approx(-0.1 / 2.0, rel=1e-5)

    def test_mismatched_state_names_the_layer(self):
        optimizer = Adagrad()
        params = {"fire2/squeeze_w": Tensor([1.0, 2.0])}
        with pytest.raises(ParameterError) as info:
            optimizer.apply(params, {"fire2/squeeze_w": np.ones(2)}, {"fire2/squeeze_w": np.zeros(3)})
        assert info.value.layer_id == "fire2"

    def test_missing_gradient_is_rejected(self):
        optimizer = Adagrad()
        params = {"head/w": Tensor([1.0])}
        with pytest.raises(ParameterError):
            optimizer.apply(params, {}, optimizer.init_state(params))

    def test_learning_rate_must_be_positive(self):
        with pytest.raises(ParameterError):
            Adagrad(lr=0.0)


class TestTrainStep:
    """One averaged update over a batch of frames."""

    def test_loss_descends(self, compact_params, compact_frames):
        optimizer = Adagrad(lr=0.001)
        state = optimizer.init_state(compact_params.tensors)
        params = compact_params
        losses = []
        for _ in range(20):
            params, state, value = train_step(params, compact_frames, optimizer, state)
            losses.append(value)
        assert all(math.isfinite(v) for v in losses)
        assert losses[-1] < losses[0]
        decreasing = sum(b < a for a, b in zip(losses[:-1], losses[1:]))
        assert decreasing >= 0.8 * (len(losses) - 1)

    def test_returns_new_parameters_and_keeps_the_old(self, compact_params, compact_frames):
        optimizer = Adagrad()
        before = compact_params.tensors["head/w"].numpy()
        params, state, _ = train_step(compact_params, compact_frames, optimizer,
                                      optimizer.init_state(compact_params.tensors))
        np.testing.assert_array_equal(compact_params.tensors["head/w"].data, before)
        assert not np.array_equal(params.tensors["head/w"].data, before)
        assert set(state) == set(compact_params.tensors)
        assert params.tensors["head/w"].data.dtype == np.float32

    def test_empty_batch_is_rejected(self, compact_params):
        optimizer = Adagrad()
        with pytest.raises(DataError):
            train_step(compact_params, [], optimizer, optimizer.init_state(compact_params.tensors))

    def test_unlabelled_frame_is_rejected(self, compact_params, compact_frames):
        frame = compact_frames[0]
        unlabelled = type(frame)(frame.channels, frame.occupancy, frame.source_index)
        optimizer = Adagrad()
        with pytest.raises(DataError):
            train_step(compact_params, [unlabelled], optimizer, optimizer.init_state(compact_params.tensors))

    def test_non_finite_weights_name_the_first_layer(self, compact_params, compact_frames):
        tensors = dict(compact_params.tensors)
        poisoned = tensors["conv1/w"].numpy()
        poisoned[0, 0, 0, 0] = np.nan
        tensors["conv1/w"] = Tensor(poisoned)
        params = compact_params.with_tensors(tensors)
        optimizer = Adagrad()
        with pytest.raises(NumericalError) as info:
            train_step(params, compact_frames, optimizer, optimizer.init_state(params.tensors))
        assert info.value.layer_id == "conv1"
        assert info.value.exit_code == 3


@pytest.mark.slow
class TestOverfit:
    """A compact graph memorises a handful of synthetic scenes."""

    def test_reaches_high_foreground_iou(self):
        frames = [synthetic_frame(seed, COMPACT_PROJECTION) for seed in range(8)]
        params = init_params(0, GraphConfig.compact())
        optimizer = Adagrad(lr=0.001)
        state = optimizer.init_state(params.tensors)
        for _ in range(2000):
            params, state, _ = train_step(params, frames, optimizer, state)

        counts = ClassCounts.empty()
        for frame in frames:
            frame_counts, _ = evaluate_frame(frame, params)
            counts = counts.merge(frame_counts)
        report = finalize(counts, len(frames))
        assert report.mean_iou() is not None
        assert report.mean_iou() > 0.8
