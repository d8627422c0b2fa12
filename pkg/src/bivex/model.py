"""Model assembly: configuration flags, parameter initialization, and the
image -> features -> text forward paths shared by training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bivex import decoder as D
from bivex import encoder as E
from bivex import routing as R
from bivex import tensor as T
from bivex.decoder import DEFAULT_VOCAB, DecoderParams, Vocabulary
from bivex.encoder import EncoderConfig
from bivex.routing import Direction, RoutedImage
from bivex.tensor import LstmParams, Tensor


@dataclass
class ModelConfig:
    """Variant flags plus geometry. Baseline: no DEM channel, single
    attention head. The paper-scale width (512 LSTM units, 100k iterations,
    batch 512) is deliberately not the default; desk scale is 128 units."""

    use_dem: bool = False
    use_san: bool = False
    dem_kernel_swap: bool = False
    h_net: int = 32
    w_net: int = 100
    d_h: int = 128
    d_a: int = 128
    t_max: int = D.DEFAULT_T_MAX
    dtype: str = "float64"
    encoder: EncoderConfig | None = None
    vocab_chars: str = Vocabulary.CHARS

    def __post_init__(self):
        if self.encoder is None:
            self.encoder = E.default_encoder_config(2 if self.use_dem else 1)
        elif self.encoder.in_channels != (2 if self.use_dem else 1):
            raise E.ConfigError(
                f"encoder expects {self.encoder.in_channels} input channels but use_dem={self.use_dem}"
            )

    @property
    def in_channels(self) -> int:
        return 2 if self.use_dem else 1

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def feature_shape(self) -> tuple[int, int, int]:
        return E.infer_output_shape(self.encoder, (self.in_channels, self.h_net, self.w_net))

    def to_dict(self) -> dict:
        return {
            "use_dem": self.use_dem,
            "use_san": self.use_san,
            "dem_kernel_swap": self.dem_kernel_swap,
            "h_net": self.h_net,
            "w_net": self.w_net,
            "d_h": self.d_h,
            "d_a": self.d_a,
            "t_max": self.t_max,
            "dtype": self.dtype,
            "encoder": self.encoder.to_dict(),
            "vocab_chars": self.vocab_chars,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            use_dem=bool(d["use_dem"]),
            use_san=bool(d["use_san"]),
            dem_kernel_swap=bool(d["dem_kernel_swap"]),
            h_net=int(d["h_net"]),
            w_net=int(d["w_net"]),
            d_h=int(d["d_h"]),
            d_a=int(d["d_a"]),
            t_max=int(d["t_max"]),
            dtype=str(d["dtype"]),
            encoder=EncoderConfig.from_dict(d["encoder"]),
            vocab_chars=str(d["vocab_chars"]),
        )


@dataclass
class ModelParams:
    """Every learnable weight of one model instance."""

    config: ModelConfig
    encoder: list[tuple[Tensor, Tensor]]
    decoder: DecoderParams
    vocab: Vocabulary = field(default_factory=lambda: DEFAULT_VOCAB)

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(self.encoder):
            out[f"enc{i}.w"] = w
            out[f"enc{i}.b"] = b
        d = self.decoder
        out["dec.w_c"] = d.w_c
        out["dec.lstm.w_x"] = d.lstm.w_x
        out["dec.lstm.w_h"] = d.lstm.w_h
        out["dec.lstm.b"] = d.lstm.b
        out["dec.w_s_h"] = d.w_s_h
        if d.w_s_v is not None:
            out["dec.w_s_v"] = d.w_s_v
        out["dec.w_f"] = d.w_f
        out["dec.v_a"] = d.v_a
        out["dec.w_o"] = d.w_o
        out["dec.b_o"] = d.b_o
        return out

    def num_params(self) -> int:
        return sum(t.size for t in self.named().values())

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.named().values())

    def copy(self) -> "ModelParams":
        """Deep copy of the weights (shares the config object)."""
        return params_from_named(self.config, {k: t.data.copy() for k, t in self.named().items()})


def init_model(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Deterministic initialization from a seed. Draw order is fixed so the
    same seed always yields the same weights."""
    rng = np.random.default_rng(seed)
    dtype = config.np_dtype
    vocab = Vocabulary(config.vocab_chars)
    enc = E.init_params(config.encoder, rng, dtype=dtype)
    c_f, _, w_f_cols = config.feature_shape()
    d_e = c_f  # the char embedding and the context vector are summed
    v = vocab.size
    d_h, d_a = config.d_h, config.d_a

    def norm(scale, shape):
        return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype), requires_grad=True)

    w_c = norm(np.sqrt(1.0 / d_e), (v + 1, d_e))
    w_x = norm(np.sqrt(1.0 / (d_e + d_h)), (4 * d_h, d_e))
    w_h = norm(np.sqrt(1.0 / (d_e + d_h)), (4 * d_h, d_h))
    b = np.zeros(4 * d_h, dtype=dtype)
    b[d_h : 2 * d_h] = 1.0  # forget-gate bias
    lstm = LstmParams(w_x=w_x, w_h=w_h, b=Tensor(b, requires_grad=True))
    w_s_h = norm(np.sqrt(1.0 / d_h), (d_a, d_h))
    w_s_v = norm(np.sqrt(1.0 / d_h), (d_a, d_h)) if config.use_san else None
    w_f = norm(np.sqrt(1.0 / c_f), (d_a, c_f))
    v_a = norm(np.sqrt(1.0 / d_a), (d_a,))
    w_o = norm(np.sqrt(1.0 / d_h), (v, d_h))
    b_o = Tensor(np.zeros(v, dtype=dtype), requires_grad=True)
    dec = DecoderParams(w_c=w_c, lstm=lstm, w_s_h=w_s_h, w_s_v=w_s_v, w_f=w_f, v_a=v_a, w_o=w_o, b_o=b_o)
    return ModelParams(config=config, encoder=enc, decoder=dec, vocab=vocab)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected parameter table for a config (used to validate checkpoints)."""
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = config.encoder.in_channels
    for i, layer in enumerate(config.encoder.layers):
        shapes[f"enc{i}.w"] = (layer.out_channels, c_in, layer.kernel, layer.kernel)
        shapes[f"enc{i}.b"] = (layer.out_channels,)
        c_in = layer.out_channels
    c_f, _, _ = config.feature_shape()
    v = len(config.vocab_chars) + 2
    d_h, d_a = config.d_h, config.d_a
    shapes["dec.w_c"] = (v + 1, c_f)
    shapes["dec.lstm.w_x"] = (4 * d_h, c_f)
    shapes["dec.lstm.w_h"] = (4 * d_h, d_h)
    shapes["dec.lstm.b"] = (4 * d_h,)
    shapes["dec.w_s_h"] = (d_a, d_h)
    if config.use_san:
        shapes["dec.w_s_v"] = (d_a, d_h)
    shapes["dec.w_f"] = (d_a, c_f)
    shapes["dec.v_a"] = (d_a,)
    shapes["dec.w_o"] = (v, d_h)
    shapes["dec.b_o"] = (v,)
    return shapes


def params_from_named(config: ModelConfig, arrays: dict[str, np.ndarray]) -> ModelParams:
    """Rebuild a ModelParams from named arrays (checkpoint restore)."""
    expected = param_shapes(config)
    missing = set(expected) - set(arrays)
    extra = set(arrays) - set(expected)
    if missing or extra:
        raise ValueError(f"parameter table mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    dtype = config.np_dtype
    tensors = {}
    for name, shape in expected.items():
        arr = np.asarray(arrays[name])
        if tuple(arr.shape) != shape:
            raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
        tensors[name] = Tensor(arr.astype(dtype, copy=False), requires_grad=True)
    enc = []
    for i in range(len(config.encoder.layers)):
        enc.append((tensors[f"enc{i}.w"], tensors[f"enc{i}.b"]))
    lstm = LstmParams(w_x=tensors["dec.lstm.w_x"], w_h=tensors["dec.lstm.w_h"], b=tensors["dec.lstm.b"])
    dec = DecoderParams(
        w_c=tensors["dec.w_c"],
        lstm=lstm,
        w_s_h=tensors["dec.w_s_h"],
        w_s_v=tensors.get("dec.w_s_v"),
        w_f=tensors["dec.w_f"],
        v_a=tensors["dec.v_a"],
        w_o=tensors["dec.w_o"],
        b_o=tensors["dec.b_o"],
    )
    return ModelParams(config=config, encoder=enc, decoder=dec, vocab=Vocabulary(config.vocab_chars))


# ---------------------------------------------------------------------------
# forward paths
# ---------------------------------------------------------------------------


def model_input(routed: RoutedImage, config: ModelConfig) -> np.ndarray:
    """Channels-last input planes (H, W, C_in) for one routed image: the
    pixels, plus the directional mask channel when DEM is enabled."""
    if config.use_dem:
        x = R.concat_dem(routed, swap=config.dem_kernel_swap).data
    else:
        x = routed.pixels.data
    return x.transpose(1, 2, 0).astype(config.np_dtype)


def encode_features(params: ModelParams, inputs: Tensor) -> Tensor:
    """Channels-last (B, H, W, C_in) -> (B, H_f, W_f, C_f)."""
    return E.encode_batch_nhwc(inputs, params.encoder, params.config.encoder)


def predict_routed(params: ModelParams, routed: RoutedImage) -> D.DecodeResult:
    """Full greedy decode of one routed image, with attention records."""
    x = Tensor(model_input(routed, params.config)[None])
    feats = encode_features(params, x)
    fmap = E.FeatureMap(values=T.transpose(T.reshape(feats, tuple(feats.shape[1:])), (2, 0, 1)))
    return D.decode_sequence(fmap, routed.direction, params.decoder, t_max=params.config.t_max, vocab=params.vocab)


def predict_texts(params: ModelParams, inputs: np.ndarray, horiz_mask: np.ndarray, chunk: int = 128) -> list[str]:
    """Batched greedy decode over prepared input planes."""
    texts: list[str] = []
    for lo in range(0, len(inputs), chunk):
        hi = min(lo + chunk, len(inputs))
        feats = encode_features(params, Tensor(inputs[lo:hi]))
        texts.extend(
            D.greedy_batch(feats, horiz_mask[lo:hi], params.decoder, vocab=params.vocab, t_max=params.config.t_max)
        )
    return texts
