"""
Layers built on the tensor engine: linear, layer norm, convolutions, multi-head
attention and post-norm transformer encoder / decoder layers.
"""

import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from lanecast.errors import ShapeMismatch
from lanecast.numerics import tensor as T
from lanecast.numerics.tensor import Tensor


def xavier_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int,
                   gain: float = 1.0) -> np.ndarray:
    """Uniform in +/- gain * sqrt(6 / (fan_in + fan_out))."""
    bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def parameter(values: np.ndarray, name: str) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


class Module:
    """
    Base class: parameters are Tensor attributes with ``requires_grad``; child
    modules are Module attributes or lists of Modules. Attribute order is the
    registration order, so parameter naming is deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.values.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ShapeMismatch(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, p in own.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint shape {values.shape} vs model {p.shape}")
            p.values = values.copy()
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, gain: float = 1.0):
        self.weight = parameter(xavier_uniform(rng, (in_dim, out_dim), in_dim, out_dim, gain), "weight")
        self.bias = parameter(np.zeros(out_dim), "bias")

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(dim), "gamma")
        self.beta = parameter(np.zeros(dim), "beta")
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, rng: np.random.Generator):
        self.weight = parameter(
            xavier_uniform(rng, (out_channels, in_channels, kernel), in_channels * kernel, out_channels * kernel),
            "weight",
        )
        self.bias = parameter(np.zeros(out_channels), "bias")
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, self.stride)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, rng: np.random.Generator):
        area = kernel * kernel
        self.weight = parameter(
            xavier_uniform(rng, (out_channels, in_channels, kernel, kernel), in_channels * area, out_channels * area),
            "weight",
        )
        self.bias = parameter(np.zeros(out_channels), "bias")
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride)


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, in_dim: int, dims: Sequence[int], rng: np.random.Generator, last_gain: float = 1.0):
        sizes = [in_dim, *dims]
        self.layers = [
            Linear(a, b, rng, gain=last_gain if i == len(dims) - 1 else 1.0)
            for i, (a, b) in enumerate(zip(sizes, sizes[1:]))
        ]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ShapeMismatch(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        batch, length, d_model = x.shape
        head_dim = d_model // self.n_heads
        return T.transpose(T.reshape(x, (batch, length, self.n_heads, head_dim)), (0, 2, 1, 3))

    def forward(self, query: Tensor, key_value: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        batch, length, d_model = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key_value))
        v = self._split(self.v_proj(key_value))
        attended = T.scaled_dot_product_attention(q, k, v, mask)
        merged = T.reshape(T.transpose(attended, (0, 2, 1, 3)), (batch, length, d_model))
        return self.out_proj(merged)


class FeedForward(Module):
    def __init__(self, d_model: int, ff_dim: int, rng: np.random.Generator):
        self.fc1 = Linear(d_model, ff_dim, rng)
        self.fc2 = Linear(ff_dim, d_model, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class EncoderLayer(Module):
    """Post-norm self-attention block."""

    def __init__(self, d_model: int, n_heads: int, ff_dim: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, ff_dim, rng)
        self.norm2 = LayerNorm(d_model)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        x = self.norm1(x + self.self_attn(x, x, mask))
        return self.norm2(x + self.ff(x))


class DecoderLayer(Module):
    """Post-norm causal self-attention, cross-attention to memory, feed-forward."""

    def __init__(self, d_model: int, n_heads: int, ff_dim: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, ff_dim, rng)
        self.norm3 = LayerNorm(d_model)

    def forward(self, x: Tensor, memory: Tensor, self_mask: Optional[np.ndarray] = None) -> Tensor:
        x = self.norm1(x + self.self_attn(x, x, self_mask))
        x = self.norm2(x + self.cross_attn(x, memory))
        return self.norm3(x + self.ff(x))


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal (length, d_model) table."""
    position = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, d_model, 2) / d_model))
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(position * rates)
    table[:, 1::2] = np.cos(position * rates[: d_model // 2])
    return table
