"""Small embedding networks mapping image batches to d-dimensional features.

Two desk-scale architectures:

* ``conv-small``: conv3x3(Cin->32)/relu/maxpool2 -> conv3x3(32->64)/relu/
  maxpool2 -> conv3x3(64->128)/relu -> global average pool, d fixed at 128.
* ``mlp-small``: flatten -> linear(256)/relu -> linear(d), default d = 64.

No batch normalization or dropout: every sample's embedding depends only on
that sample, which keeps runs deterministic and gradient checks simple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .rng import named_rng

CONV_SMALL_DIM = 128
MLP_SMALL_DEFAULT_DIM = 64


@dataclass(frozen=True)
class EncoderConfig:
    kind: str  # "mlp-small" | "conv-small"
    in_shape: tuple  # (channels, height, width)
    embed_dim: int = 0  # 0 = architecture default
    seed: int = 0

    def resolved_dim(self) -> int:
        if self.kind == "conv-small":
            if self.embed_dim not in (0, CONV_SMALL_DIM):
                raise ConfigError("conv-small embedding dim is fixed at 128")
            return CONV_SMALL_DIM
        if self.kind == "mlp-small":
            return self.embed_dim or MLP_SMALL_DEFAULT_DIM
        raise ConfigError(f"unknown encoder kind '{self.kind}'")


def _he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


@dataclass
class Encoder:
    config: EncoderConfig
    params: list = field(default_factory=list)  # ordered (name, Tensor)

    def named_params(self):
        """Stable ordered list of (name, tensor); tensors alias live parameters."""
        return list(self.params)

    def embed(self, batch: T.Tensor) -> T.Tensor:
        """Map a B×C×H×W batch to B×d embeddings."""
        c, h, w = self.config.in_shape
        if batch.data.ndim != 4 or batch.data.shape[1:] != (c, h, w):
            raise ShapeError(
                f"batch shape {batch.data.shape} does not match encoder input {(c, h, w)}"
            )
        if self.config.kind == "conv-small":
            return self._embed_conv(batch)
        return self._embed_mlp(batch)

    def _param(self, name):
        for n, t in self.params:
            if n == name:
                return t
        raise KeyError(name)

    def _embed_conv(self, batch):
        x = batch
        for i in range(3):
            w = self._param(f"layer.{i}.weight")
            b = self._param(f"layer.{i}.bias")
            x = T.conv2d(x, w, stride=1, padding=1)
            x = T.relu(x + b.reshape(1, -1, 1, 1))
            if i < 2:
                x = T.maxpool2(x)
        return T.global_avg_pool(x)

    def _embed_mlp(self, batch):
        n = batch.data.shape[0]
        x = batch.reshape((n, -1))
        w0, b0 = self._param("layer.0.weight"), self._param("layer.0.bias")
        w1, b1 = self._param("layer.1.weight"), self._param("layer.1.bias")
        h = T.relu(T.matmul(x, w0) + b0)
        return T.matmul(h, w1) + b1


def encoder_init(config: EncoderConfig) -> Encoder:
    """Build an encoder with He-normal weights and zero biases, seeded."""
    c, h, w = config.in_shape
    if c < 1 or h < 1 or w < 1:
        raise ConfigError(f"invalid input shape {config.in_shape}")
    rng = named_rng("encoder-init", config.seed)
    params = []
    if config.kind == "conv-small":
        if h % 4 or w % 4:
            raise ConfigError(
                f"conv-small needs spatial dims divisible by 4, got {h}x{w}"
            )
        channels = [c, 32, 64, 128]
        for i in range(3):
            cin, cout = channels[i], channels[i + 1]
            fan_in = cin * 9
            params.append((f"layer.{i}.weight", T.Tensor(_he_normal(rng, (cout, cin, 3, 3), fan_in), requires_grad=True)))
            params.append((f"layer.{i}.bias", T.Tensor(np.zeros(cout), requires_grad=True)))
    elif config.kind == "mlp-small":
        d = config.resolved_dim()
        n_in = c * h * w
        params.append(("layer.0.weight", T.Tensor(_he_normal(rng, (n_in, 256), n_in), requires_grad=True)))
        params.append(("layer.0.bias", T.Tensor(np.zeros(256), requires_grad=True)))
        params.append(("layer.1.weight", T.Tensor(_he_normal(rng, (256, d), 256), requires_grad=True)))
        params.append(("layer.1.bias", T.Tensor(np.zeros(d), requires_grad=True)))
    else:
        raise ConfigError(f"unknown encoder kind '{config.kind}'")
    return Encoder(config=config, params=params)
