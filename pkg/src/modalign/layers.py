"""Small layer library on top of the tensor engine.

Layers hold their parameters as Tensors and expose them through
``named_parameters()``. ``forward`` threads an explicit training flag and RNG
so dropout stays reproducible and inference stays deterministic.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ParameterError
from .tensor import Tensor


def init_uniform(rng: np.random.Generator, shape, fan_in, dtype=np.float32):
    """Uniform in +-sqrt(1/fan_in); biases are zero-initialized elsewhere."""
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Module:
    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for attr, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[attr] = val
            elif isinstance(val, Module):
                for n, p in val.named_parameters().items():
                    out[f"{attr}.{n}"] = p
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def __call__(self, x, training=False, rng=None):
        return self.forward(x, training=training, rng=rng)

    def load_state(self, state: dict[str, np.ndarray], prefix: str = ""):
        params = self.named_parameters()
        for name, p in params.items():
            p.data = np.array(state[prefix + name], dtype=p.data.dtype)

    def state(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + n: p.data.copy() for n, p in self.named_parameters().items()}

    def astype(self, dtype):
        """Cast parameters in place (float64 is used for gradient checks)."""
        for p in self.named_parameters().values():
            p.data = p.data.astype(dtype)
        return self


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.w = init_uniform(rng, (in_dim, out_dim), in_dim, dtype)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def forward(self, x, training=False, rng=None):
        return T.dense_forward(x, self.w, self.b)


class Conv2d(Module):
    """Stride-1 convolution with bias; padding 'same', 'valid', or (ph, pw)."""

    def __init__(self, in_ch, out_ch, kh, kw, rng, padding="same", dtype=np.float32):
        fan_in = in_ch * kh * kw
        self.k = init_uniform(rng, (out_ch, in_ch, kh, kw), fan_in, dtype)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.padding = padding

    def forward(self, x, training=False, rng=None):
        y = T.conv2d_forward(x, self.k, padding=self.padding)
        return y + self.b.reshape(1, -1, 1, 1)


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, kh, kw, rng, padding="same", dtype=np.float32):
        fan_in = in_ch * kh * kw
        self.k = init_uniform(rng, (in_ch, out_ch, kh, kw), fan_in, dtype)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.padding = padding

    def forward(self, x, training=False, rng=None):
        y = T.conv_transpose2d(x, self.k, padding=self.padding)
        return y + self.b.reshape(1, -1, 1, 1)


class LayerNorm(Module):
    """Per-feature normalization over the last axis with learnable gain/bias."""

    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.g = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x, training=False, rng=None):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self.g + self.b


class BatchNorm2d(Module):
    """Batch-statistics normalization per channel of a [B,C,H,W] tensor.

    Always uses current-batch statistics; the decoder that needs it is only
    ever run in training-style passes, so no running averages are kept.
    """

    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        self.g = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x, training=False, rng=None):
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        norm = centered / (var + self.eps).sqrt()
        return norm * self.g.reshape(1, -1, 1, 1) + self.b.reshape(1, -1, 1, 1)


class Activation(Module):
    def __init__(self, kind: str):
        if kind not in ("gelu", "relu", "sigmoid"):
            raise ParameterError(f"unknown activation kind: {kind!r}")
        self.kind = kind

    def forward(self, x, training=False, rng=None):
        return T.activation(x, self.kind)


class Dropout(Module):
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x, training=False, rng=None):
        return T.dropout(x, self.p, training, rng)


class MaxPool2d(Module):
    def __init__(self, pool_h: int, pool_w: int):
        self.pool_h, self.pool_w = pool_h, pool_w

    def forward(self, x, training=False, rng=None):
        return T.maxpool2d(x, self.pool_h, self.pool_w)


class UpsampleTime2(Module):
    def forward(self, x, training=False, rng=None):
        return T.upsample_time2(x)


class Flatten(Module):
    def forward(self, x, training=False, rng=None):
        return x.reshape(x.shape[0], -1)


class Sequential(Module):
    def __init__(self, *modules: Module):
        self.modules = list(modules)

    def named_parameters(self):
        out = {}
        for i, m in enumerate(self.modules):
            for n, p in m.named_parameters().items():
                out[f"{i}.{n}"] = p
        return out

    def forward(self, x, training=False, rng=None):
        for m in self.modules:
            x = m(x, training=training, rng=rng)
        return x
