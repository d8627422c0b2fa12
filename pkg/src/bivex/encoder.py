"""Small VGG-style convolutional encoder producing the attention feature map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bivex import tensor as T
from bivex.tensor import Tensor


class ConfigError(ValueError):
    """Encoder configuration produces an invalid geometry."""


@dataclass(frozen=True)
class ConvSpec:
    """One conv layer: kernel/stride/pad plus an optional trailing max-pool.

    ``pool`` is (kh, kw) with stride equal to the window.
    """

    out_channels: int
    kernel: int = 3
    stride: int = 1
    pad: int = 1
    pool: tuple[int, int] | None = None


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int
    layers: tuple[ConvSpec, ...]

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "layers": [
                {
                    "out_channels": l.out_channels,
                    "kernel": l.kernel,
                    "stride": l.stride,
                    "pad": l.pad,
                    "pool": list(l.pool) if l.pool else None,
                }
                for l in self.layers
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        layers = tuple(
            ConvSpec(
                out_channels=int(l["out_channels"]),
                kernel=int(l["kernel"]),
                stride=int(l["stride"]),
                pad=int(l["pad"]),
                pool=tuple(l["pool"]) if l.get("pool") else None,
            )
            for l in d["layers"]
        )
        return EncoderConfig(in_channels=int(d["in_channels"]), layers=layers)


def default_encoder_config(in_channels: int) -> EncoderConfig:
    """Desk-scale stack: 32c3-pool2, 64c3-pool2, 128c3, 128c3-pool(2,1).

    On a 32x100 input this yields a 128x4x25 feature map: three height
    halvings, two width halvings.
    """
    return EncoderConfig(
        in_channels=in_channels,
        layers=(
            ConvSpec(32, pool=(2, 2)),
            ConvSpec(64, pool=(2, 2)),
            ConvSpec(128),
            ConvSpec(128, pool=(2, 1)),
        ),
    )


@dataclass
class FeatureMap:
    """Encoder output: values (C_f, H_f, W_f); cells indexed (i, j), channel c."""

    values: Tensor

    @property
    def c_f(self) -> int:
        return self.values.shape[0]

    @property
    def h_f(self) -> int:
        return self.values.shape[1]

    @property
    def w_f(self) -> int:
        return self.values.shape[2]


def infer_output_shape(config: EncoderConfig, input_shape: tuple[int, int, int]) -> tuple[int, int, int]:
    """Pure shape arithmetic for the conv/pool stack; must match encode()."""
    c, h, w = input_shape
    if c != config.in_channels:
        raise ConfigError(f"input has {c} channels, config expects {config.in_channels}")
    for i, layer in enumerate(config.layers):
        for name, extent in (("height", h), ("width", w)):
            span = extent + 2 * layer.pad - layer.kernel
            if span < 0 or span % layer.stride:
                raise ConfigError(f"layer {i}: conv does not tile input {name} {extent}")
        h = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
        w = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
        if layer.pool is not None:
            ph, pw = layer.pool
            if ph > h or pw > w:
                raise ConfigError(f"layer {i}: pool {ph}x{pw} larger than map {h}x{w}")
            h = (h - ph) // ph + 1
            w = (w - pw) // pw + 1
        c = layer.out_channels
        if h < 1 or w < 1:
            raise ConfigError(f"layer {i} collapses the spatial extent to {h}x{w}")
    return c, h, w


def init_params(config: EncoderConfig, rng: np.random.Generator, dtype=np.float64) -> list[tuple[Tensor, Tensor]]:
    """He-scaled filters and zero biases, one (W, b) pair per layer."""
    params = []
    c_in = config.in_channels
    for layer in config.layers:
        fan_in = c_in * layer.kernel * layer.kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(layer.out_channels, c_in, layer.kernel, layer.kernel))
        b = np.zeros(layer.out_channels)
        params.append((Tensor(w.astype(dtype), requires_grad=True), Tensor(b.astype(dtype), requires_grad=True)))
        c_in = layer.out_channels
    return params


def encode_batch_nhwc(x: Tensor, params: list[tuple[Tensor, Tensor]], config: EncoderConfig) -> Tensor:
    """Forward the conv stack in channels-last layout: (B,H,W,C_in) ->
    (B,H_f,W_f,C_f). This is the fast path the trainer uses."""
    if x.ndim != 4:
        raise T.DimensionError(f"encode_batch_nhwc expects (B,H,W,C), got {x.shape}")
    if x.shape[3] != config.in_channels:
        raise T.DimensionError(f"input has {x.shape[3]} channels, config expects {config.in_channels}")
    h = x
    for layer, (w, b) in zip(config.layers, params):
        h = T.conv2d_nhwc(h, w, stride=layer.stride, padding=layer.pad)
        h = T.bias_relu(h, b)
        if layer.pool is not None:
            ph, pw = layer.pool
            h = T.maxpool2d_nhwc(h, ph, pw)
    return h


def encode_batch(x: Tensor, params: list[tuple[Tensor, Tensor]], config: EncoderConfig) -> Tensor:
    """Forward the conv stack on a (B, C_in, H, W) batch."""
    if x.ndim != 4:
        raise T.DimensionError(f"encode_batch expects (B,C,H,W), got {x.shape}")
    out = encode_batch_nhwc(T.transpose(x, (0, 2, 3, 1)), params, config)
    return T.transpose(out, (0, 3, 1, 2))


def encode(x: Tensor, params: list[tuple[Tensor, Tensor]], config: EncoderConfig) -> FeatureMap:
    """Forward a single (C_in, H, W) image to its feature map."""
    if x.ndim != 3:
        raise T.DimensionError(f"encode expects (C,H,W), got {x.shape}")
    out = encode_batch(T.reshape(x, (1,) + tuple(x.shape)), params, config)
    return FeatureMap(values=T.reshape(out, tuple(out.shape[1:])))
