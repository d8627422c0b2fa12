"""Encoder geometry, forward semantics, and shape-inference agreement."""

import numpy as np
import pytest

from bivex import tensor as T
from bivex.encoder import (
    ConfigError,
    ConvSpec,
    EncoderConfig,
    default_encoder_config,
    encode,
    encode_batch,
    encode_batch_nhwc,
    infer_output_shape,
    init_params,
)
from bivex.tensor import Tensor


class TestInferOutputShape:
    def test_single_same_conv(self):
        cfg = EncoderConfig(in_channels=1, layers=(ConvSpec(16),))
        assert infer_output_shape(cfg, (1, 32, 100)) == (16, 32, 100)

    def test_default_desk_config(self):
        cfg = default_encoder_config(2)
        assert infer_output_shape(cfg, (2, 32, 100)) == (128, 4, 25)
        cfg1 = default_encoder_config(1)
        assert infer_output_shape(cfg1, (1, 32, 100)) == (128, 4, 25)

    def test_pool_floor_division(self):
        cfg = EncoderConfig(in_channels=1, layers=(ConvSpec(4, pool=(2, 2)),))
        assert infer_output_shape(cfg, (1, 7, 7)) == (4, 3, 3)

    def test_channel_mismatch(self):
        with pytest.raises(ConfigError):
            infer_output_shape(default_encoder_config(2), (1, 32, 100))

    def test_collapsing_config_rejected(self):
        cfg = EncoderConfig(in_channels=1, layers=(ConvSpec(4, kernel=5, pad=0),))
        with pytest.raises(ConfigError):
            infer_output_shape(cfg, (1, 4, 4))

    def test_roundtrip_serialization(self):
        cfg = default_encoder_config(2)
        assert EncoderConfig.from_dict(cfg.to_dict()) == cfg


class TestEncode:
    def test_zero_everything_gives_zero_features(self):
        cfg = default_encoder_config(1)
        params = [
            (Tensor(np.zeros_like(w.data)), Tensor(np.zeros_like(b.data)))
            for w, b in init_params(cfg, np.random.default_rng(0))
        ]
        fmap = encode(Tensor(np.zeros((1, 32, 100))), params, cfg)
        assert fmap.values.shape == (128, 4, 25)
        np.testing.assert_array_equal(fmap.values.data, 0.0)

    def test_shapes_match_inference(self):
        rng = np.random.default_rng(1)
        cfg = default_encoder_config(2)
        params = init_params(cfg, rng)
        x = Tensor(rng.normal(size=(2, 32, 100)))
        fmap = encode(x, params, cfg)
        assert tuple(fmap.values.shape) == infer_output_shape(cfg, (2, 32, 100))
        assert (fmap.c_f, fmap.h_f, fmap.w_f) == (128, 4, 25)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_random_configs_shapes_agree(self, seed):
        rng = np.random.default_rng(seed)
        layers = []
        for _ in range(int(rng.integers(1, 4))):
            pool = (2, 2) if rng.random() < 0.5 else None
            layers.append(ConvSpec(int(rng.integers(2, 9)), pool=pool))
        cfg = EncoderConfig(in_channels=int(rng.integers(1, 4)), layers=tuple(layers))
        shape_in = (cfg.in_channels, int(rng.integers(8, 21)), int(rng.integers(8, 33)))
        try:
            want = infer_output_shape(cfg, shape_in)
        except ConfigError:
            return
        params = init_params(cfg, rng)
        fmap = encode(Tensor(rng.normal(size=shape_in)), params, cfg)
        assert tuple(fmap.values.shape) == want

    def test_batch_matches_per_sample(self):
        rng = np.random.default_rng(2)
        cfg = EncoderConfig(in_channels=1, layers=(ConvSpec(4, pool=(2, 2)), ConvSpec(6)))
        params = init_params(cfg, rng)
        xs = rng.normal(size=(3, 1, 8, 12))
        batched = encode_batch(Tensor(xs), params, cfg).data
        for i in range(3):
            single = encode(Tensor(xs[i]), params, cfg).values.data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    def test_nhwc_matches_nchw(self):
        rng = np.random.default_rng(3)
        cfg = EncoderConfig(in_channels=2, layers=(ConvSpec(5, pool=(2, 2)),))
        params = init_params(cfg, rng)
        xs = rng.normal(size=(2, 2, 6, 10))
        a = encode_batch(Tensor(xs), params, cfg).data
        b = encode_batch_nhwc(Tensor(xs.transpose(0, 2, 3, 1)), params, cfg).data
        np.testing.assert_allclose(a, b.transpose(0, 3, 1, 2), atol=1e-12)

    def test_channel_mismatch(self):
        cfg = default_encoder_config(2)
        params = init_params(cfg, np.random.default_rng(0))
        with pytest.raises(T.DimensionError):
            encode(Tensor(np.zeros((1, 32, 100))), params, cfg)

    def test_translation_consistency_pure_conv(self):
        # shifting the input one pixel right shifts interior feature columns
        rng = np.random.default_rng(4)
        cfg = EncoderConfig(in_channels=1, layers=(ConvSpec(4), ConvSpec(4)))
        params = init_params(cfg, rng)
        x = rng.normal(size=(1, 10, 16))
        shifted = np.zeros_like(x)
        shifted[:, :, 1:] = x[:, :, :-1]
        f0 = encode(Tensor(x), params, cfg).values.data
        f1 = encode(Tensor(shifted), params, cfg).values.data
        np.testing.assert_allclose(f1[:, :, 3:13], f0[:, :, 2:12], atol=1e-10)

    def test_first_layer_gradient(self):
        from bivex.gradcheck import check

        rng = np.random.default_rng(5)
        cfg = EncoderConfig(in_channels=2, layers=(ConvSpec(3, pool=(2, 2)), ConvSpec(4)))
        params = init_params(cfg, rng)
        x = Tensor(rng.normal(size=(2, 8, 16)))
        err = check(lambda: T.tensor_sum(encode(x, params, cfg).values), [params[0][0], params[0][1]])
        assert err <= 1e-4
