"""Encoder-decoder architecture, init determinism, and serialization."""

import dataclasses

import numpy as np
import pytest
import torch

from untrace.attack_model import build_model, forward, load_model, save_model
from untrace.core.config import ModelSpec
from untrace.core.rng import Rng
from untrace.errors import ContractError


def _param_count_oracle(spec: ModelSpec) -> int:
    # independent recount of the layer arithmetic:
    # encoder convs c3->b (k9), b->2b (k3 s2), 2b->4b (k3 s2), each with an
    # affine instance norm; residual blocks hold two conv+norm pairs at 4b;
    # decoder has two upsample convs (4b->2b, 2b->b, k3) with norms and a
    # final b->3 conv (k9, no norm)
    b = spec.base_channels
    k = spec.io_kernel
    total = 0

    def conv(cin, cout, kk):
        return cin * cout * kk * kk + cout

    def norm(c):
        return 2 * c

    total += conv(3, b, k) + norm(b)
    total += conv(b, 2 * b, 3) + norm(2 * b)
    total += conv(2 * b, 4 * b, 3) + norm(4 * b)
    total += spec.residual_blocks * 2 * (conv(4 * b, 4 * b, 3) + norm(4 * b))
    total += conv(4 * b, 2 * b, 3) + norm(2 * b)
    total += conv(2 * b, b, 3) + norm(b)
    total += conv(b, 3, k)
    return total


class TestArchitecture:
    def test_parameter_count_matches_hand_count(self):
        spec = ModelSpec()
        model = build_model(spec, Rng(0))
        assert model.parameter_count() == _param_count_oracle(spec)
        assert model.parameter_count() == 1_679_235

    def test_parameter_count_scales_with_spec(self):
        spec = ModelSpec(base_channels=16, residual_blocks=2)
        model = build_model(spec, Rng(0))
        assert model.parameter_count() == _param_count_oracle(spec)

    def test_forward_preserves_shape(self):
        model = build_model(ModelSpec(base_channels=8, residual_blocks=1),
                            Rng(1))
        for side in (32, 64):
            x = Rng(2).uniform(size=(3, side, side)).astype(np.float32)
            y = forward(model, x)
            assert y.shape == x.shape
            assert y.dtype == np.float32

    def test_forward_handles_rectangles_and_batches(self):
        model = build_model(ModelSpec(base_channels=8, residual_blocks=1),
                            Rng(1))
        x = Rng(3).uniform(size=(2, 3, 32, 48)).astype(np.float32)
        y = forward(model, x)
        assert y.shape == x.shape

    def test_output_in_unit_interval(self):
        # sigmoid output head
        model = build_model(ModelSpec(base_channels=8, residual_blocks=1),
                            Rng(4))
        x = Rng(5).uniform(size=(3, 32, 32)).astype(np.float32)
        y = forward(model, x)
        assert y.min() > 0.0 and y.max() < 1.0

    def test_rejects_bad_shapes(self):
        model = build_model(ModelSpec(base_channels=8, residual_blocks=1),
                            Rng(6))
        with pytest.raises(ContractError):
            forward(model, np.zeros((3, 30, 32), dtype=np.float32))
        with pytest.raises(ContractError):
            forward(model, np.zeros((1, 32, 32), dtype=np.float32))
        with pytest.raises(ContractError):
            forward(model, np.zeros((32, 32), dtype=np.float32))


class TestInit:
    def test_build_is_deterministic(self):
        a = build_model(ModelSpec(), Rng(42))
        b = build_model(ModelSpec(), Rng(42))
        for k, va in a.state_arrays().items():
            np.testing.assert_array_equal(va, b.state_arrays()[k], err_msg=k)

    def test_different_seeds_differ(self):
        a = build_model(ModelSpec(base_channels=8, residual_blocks=1), Rng(1))
        b = build_model(ModelSpec(base_channels=8, residual_blocks=1), Rng(2))
        some_key = next(k for k in a.state_arrays() if "weight" in k)
        assert not np.array_equal(a.state_arrays()[some_key],
                                  b.state_arrays()[some_key])

    def test_variance_scaled_weights(self):
        # first conv sees fan_in = 3 * 9 * 9; std should be sqrt(2/fan_in)
        model = build_model(ModelSpec(), Rng(7))
        w = next(
            v for k, v in model.state_arrays().items()
            if k.endswith("weight") and v.ndim == 4 and v.shape[1] == 3
        )
        want = np.sqrt(2.0 / (3 * 9 * 9))
        assert w.std() == pytest.approx(want, rel=0.1)

    def test_norm_layers_start_as_identity(self):
        model = build_model(ModelSpec(base_channels=8, residual_blocks=1),
                            Rng(8))
        for name, m in model.net.named_modules():
            if isinstance(m, torch.nn.InstanceNorm2d):
                w = m.weight.detach()
                assert float(w.min()) == 1.0 == float(w.max())
                assert float(m.bias.detach().abs().max()) == 0.0


class TestSerialization:
    def test_save_load_bit_exact(self, tmp_path):
        model = build_model(ModelSpec(base_channels=8, residual_blocks=2),
                            Rng(9))
        model.training_meta["note"] = "probe"
        p = tmp_path / "m.zip"
        save_model(model, p)
        back = load_model(p)
        assert back.spec == model.spec
        assert back.training_meta["note"] == "probe"
        for k, va in model.state_arrays().items():
            np.testing.assert_array_equal(va, back.state_arrays()[k],
                                          err_msg=k)
        # outputs must agree exactly, not just weights
        x = Rng(10).uniform(size=(3, 32, 32)).astype(np.float32)
        np.testing.assert_array_equal(forward(model, x), forward(back, x))

    def test_save_is_deterministic(self, tmp_path):
        model = build_model(ModelSpec(base_channels=8, residual_blocks=1),
                            Rng(11))
        p1, p2 = tmp_path / "a.zip", tmp_path / "b.zip"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSpecValidation:
    def test_bad_spec_rejected(self):
        with pytest.raises(ContractError):
            dataclasses.replace(ModelSpec(), residual_blocks=0).validate()
        with pytest.raises(ContractError):
            dataclasses.replace(ModelSpec(), io_kernel=8).validate()
