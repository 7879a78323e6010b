"""
Tests for the composite blocks: fire, fire-deconv, squeeze reweighting and context enlargement.
"""

import numpy as np
import pytest

from src.utilities.errors import ParameterError, ShapeError
from src.utilities.layers import (EnlargementConfig, EnlargementParams, FireConfig, FireDeconvConfig, FireParams,
                                  SqueezeReweightConfig, SqueezeReweightParams, enlargement_branches,
                                  enlargement_forward, fire_deconv_forward, fire_forward,
                                  squeeze_reweight_forward)
from src.utilities.tensor import Tensor, precision
from src.utilities import ops

from .oracles import gradient_check


def random_arrays(shapes, rng, scale=0.5):
    return {name: rng.uniform(-scale, scale, shape) for name, shape in shapes.items()}


def weighted(out, weights):
    return ops.sum_all(ops.mul(out, Tensor(weights)))


class TestFire:
    """Channel plans and the fire forward pass."""

    def test_for_output_splits_channels(self):
        cfg = FireConfig.for_output(64, 128)
        assert (cfg.squeeze_channels, cfg.expand1_channels, cfg.expand3_channels) == (32, 64, 64)
        assert cfg.out_channels == 128
        assert cfg.param_shapes()["expand3_w"] == (3, 3, 32, 64)

    def test_squeeze_wider_than_input_is_rejected(self):
        with pytest.raises(ShapeError):
            FireConfig(4, 8, 4, 4)

    def test_output_is_the_relu_of_both_expands(self, rng):
        cfg = FireConfig(3, 2, 2, 3)
        arrays = random_arrays(cfg.param_shapes(), rng)
        params = FireParams.from_mapping({k: Tensor(v) for k, v in arrays.items()})
        out = fire_forward(Tensor(rng.standard_normal((4, 5, 3))), cfg, params)
        assert out.shape == (4, 5, 5)
        assert np.all(out.data >= 0)

    def test_wrong_input_channels_raise(self, rng):
        cfg = FireConfig(3, 2, 2, 2)
        params = FireParams.from_mapping({k: Tensor(v) for k, v in random_arrays(cfg.param_shapes(), rng).items()})
        with pytest.raises(ShapeError, match="channels"):
            fire_forward(Tensor(np.zeros((2, 2, 4))), cfg, params)

    def test_missing_parameters_name_the_owner(self, rng):
        with pytest.raises(ParameterError) as info:
            FireParams.from_mapping({}, "fire4")
        assert info.value.layer_id == "fire4"

    def test_gradients(self, rng):
        cfg = FireConfig(3, 2, 2, 2)
        shapes = cfg.param_shapes()
        names = list(shapes)
        weights = rng.uniform(-1, 1, (3, 4, 4))

        def build(tensors):
            params = FireParams.from_mapping(dict(zip(names, tensors[1:])))
            return weighted(fire_forward(tensors[0], cfg, params), weights)

        with precision(np.float64):
            arrays = [rng.uniform(-1, 1, (3, 4, 3))] + [rng.uniform(-0.5, 0.5, shapes[n]) for n in names]
            gradient_check(build, arrays, rng, samples=6)


class TestFireDeconv:
    """Fire block with a width-upsampling transposed convolution."""

    def _params(self, cfg, rng):
        return FireParams.from_mapping({k: Tensor(v) for k, v in random_arrays(cfg.param_shapes(), rng).items()})

    def test_doubles_width(self, rng):
        cfg = FireDeconvConfig.for_output(8, 4)
        out = fire_deconv_forward(Tensor(rng.standard_normal((2, 5, 8))), cfg, self._params(cfg, rng))
        assert out.shape == (2, 10, 4)

    def test_stride_one_keeps_width(self, rng):
        cfg = FireDeconvConfig.for_output(8, 8, stride_w=1)
        out = fire_deconv_forward(Tensor(rng.standard_normal((2, 5, 8))), cfg, self._params(cfg, rng))
        assert out.shape == (2, 5, 8)

    def test_deconv_weights_are_square_in_the_squeeze_channels(self):
        cfg = FireDeconvConfig.for_output(64, 32)
        assert cfg.param_shapes()["deconv_w"] == (1, 4, 8, 8)

    def test_missing_deconv_weights_raise(self, rng):
        cfg = FireDeconvConfig.for_output(4, 4)
        arrays = random_arrays(FireConfig.param_shapes(cfg), rng)
        params = FireParams.from_mapping({k: Tensor(v) for k, v in arrays.items()})
        with pytest.raises(ParameterError):
            fire_deconv_forward(Tensor(np.zeros((1, 2, 4))), cfg, params)

    def test_gradients(self, rng):
        cfg = FireDeconvConfig.for_output(4, 4)
        shapes = cfg.param_shapes()
        names = list(shapes)
        weights = rng.uniform(-1, 1, (2, 6, 4))

        def build(tensors):
            params = FireParams.from_mapping(dict(zip(names, tensors[1:])))
            return weighted(fire_deconv_forward(tensors[0], cfg, params), weights)

        with precision(np.float64):
            arrays = [rng.uniform(-1, 1, (2, 3, 4))] + [rng.uniform(-0.5, 0.5, shapes[n]) for n in names]
            gradient_check(build, arrays, rng, samples=6)


class TestSqueezeReweight:
    """Channel gating."""

    def test_hidden_width_is_channels_over_ratio(self):
        assert SqueezeReweightConfig(128, 16).hidden == 8
        assert SqueezeReweightConfig(8, 16).hidden == 1

    def test_matches_a_direct_computation(self, rng):
        cfg = SqueezeReweightConfig(6, 2)
        arrays = random_arrays(cfg.param_shapes(), rng)
        params = SqueezeReweightParams.from_mapping({k: Tensor(v) for k, v in arrays.items()})
        x = rng.standard_normal((3, 4, 6))
        with precision(np.float64):
            out = squeeze_reweight_forward(Tensor(x), params).data
        chi = x.mean(axis=(0, 1))
        hidden = np.maximum(chi @ arrays["fc1_w"] + arrays["fc1_b"], 0)
        gate = 1 / (1 + np.exp(-(hidden @ arrays["fc2_w"] + arrays["fc2_b"])))
        np.testing.assert_allclose(out, x * gate, rtol=1e-5, atol=1e-6)
        assert params.channels == 6 and params.ratio == 2

    def test_gradients(self, rng):
        cfg = SqueezeReweightConfig(4, 2)
        shapes = cfg.param_shapes()
        names = list(shapes)
        weights = rng.uniform(-1, 1, (3, 3, 4))

        def build(tensors):
            params = SqueezeReweightParams.from_mapping(dict(zip(names, tensors[1:])))
            return weighted(squeeze_reweight_forward(tensors[0], params), weights)

        with precision(np.float64):
            arrays = [rng.uniform(-1, 1, (3, 3, 4))] + [rng.uniform(-1, 1, shapes[n]) for n in names]
            gradient_check(build, arrays, rng, samples=6)


class TestEnlargement:
    """Multi-rate dilated context."""

    def _params(self, cfg, rng):
        arrays = random_arrays(cfg.param_shapes(), rng)
        return EnlargementParams.from_mapping({k: Tensor(v) for k, v in arrays.items()}, cfg.rates)

    def test_channel_plan(self):
        cfg = EnlargementConfig.for_input(512, (6, 9, 12))
        assert cfg.branch_channels == 128
        assert cfg.concat_channels == 640
        assert cfg.out_channels == 160

    def test_five_branches_and_a_constant_pooled_branch(self, rng):
        cfg = EnlargementConfig.for_input(8, (1, 2, 3))
        branches = enlargement_branches(Tensor(rng.standard_normal((4, 6, 8))), self._params(cfg, rng))
        assert len(branches) == 5
        assert all(branch.shape == (4, 6, 2) for branch in branches)
        pooled = branches[-1].data
        np.testing.assert_array_equal(pooled, np.broadcast_to(pooled[0, 0], pooled.shape))

    def test_output_extent(self, rng):
        cfg = EnlargementConfig.for_input(8, (1, 2, 3))
        out = enlargement_forward(Tensor(rng.standard_normal((4, 6, 8))), self._params(cfg, rng), (4, 6))
        assert out.shape == (4, 6, cfg.out_channels)

    def test_wrong_extent_raises(self, rng):
        cfg = EnlargementConfig.for_input(8, (1, 2, 3))
        with pytest.raises(ShapeError, match="spatial extent"):
            enlargement_forward(Tensor(np.zeros((4, 5, 8))), self._params(cfg, rng), (4, 6))

    def test_missing_branch_names_the_layer(self):
        with pytest.raises(ParameterError) as info:
            EnlargementParams.from_mapping({}, (1, 2, 3))
        assert info.value.layer_id == "EL"

    def test_gradients(self, rng):
        cfg = EnlargementConfig.for_input(4, (1, 2, 3))
        shapes = cfg.param_shapes()
        names = list(shapes)
        weights = rng.uniform(-1, 1, (3, 5, cfg.out_channels))

        def build(tensors):
            params = EnlargementParams.from_mapping(dict(zip(names, tensors[1:])), cfg.rates)
            return weighted(enlargement_forward(tensors[0], params), weights)

        with precision(np.float64):
            arrays = [rng.uniform(-1, 1, (3, 5, 4))] + [rng.uniform(-0.5, 0.5, shapes[n]) for n in names]
            gradient_check(build, arrays, rng, samples=4)
