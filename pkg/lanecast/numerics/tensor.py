"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable op records its parents and a closure mapping the output
gradient to one gradient per parent. ``backward`` walks the recorded graph once
in reverse topological order and then releases it; a second walk over the same
graph raises StaleTape.
"""

import contextlib
import math
import threading
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from lanecast.errors import NonScalarLoss, ShapeMismatch, StaleTape

ArrayLike = Union["Tensor", np.ndarray, float, int]

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "name", "_parents", "_backward", "_released")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._released = False

    # -- inspection ---------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._released

    def item(self) -> float:
        if self.size != 1:
            raise NonScalarLoss(f"item() needs a single value, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return transpose(self, axes[0] if len(axes) == 1 else axes)

    # -- autodiff -----------------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` of every leaf reachable from this scalar, then release the graph."""
        if self._released:
            raise StaleTape("backward() called on a graph that was already back-propagated")
        if self.size != 1:
            raise NonScalarLoss(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.values)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._released = True


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        if node._released:
            raise StaleTape("graph contains a node released by an earlier backward()")
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(values: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(values)
    if grad_enabled() and any(p.requires_grad for p in parents):
        for p in parents:
            if p._released:
                raise StaleTape("cannot build on a node released by an earlier backward()")
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _result(a.values + b.values, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _result(a.values - b.values, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _result(a.values * b.values, (a, b),
                   lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.values / b.values
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.values, a.shape), _unbroadcast(-g * out / b.values, b.shape)))


def relu(x: Tensor) -> Tensor:
    positive = x.values > 0.0
    return _result(np.where(positive, x.values, 0.0), (x,), lambda g: (np.where(positive, g, 0.0),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.values)
    return _result(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.values), (x,), lambda g: (g / x.values,))


def square(x: Tensor) -> Tensor:
    return _result(x.values ** 2, (x,), lambda g: (2.0 * g * x.values,))


def masked_fill(x: Tensor, keep: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``keep`` is False by ``value``; kept entries pass through untouched."""
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), x.shape)
    return _result(np.where(keep, x.values, value), (x,), lambda g: (np.where(keep, g, 0.0),))


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return div(tsum(x, axis, keepdims), float(count))


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.values.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: cannot view {x.shape} as {shape}") from exc
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.values, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _result(np.swapaxes(x.values, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def getitem(x: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.values)
        np.add.at(full, index, g)
        return (full,)

    return _result(x.values[index], (x,), backward)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: shapes {[t.shape for t in tensors]} along axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        out = np.matmul(a.values, b.values)
    except ValueError as exc:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are incompatible") from exc
    return _result(out, (a, b), lambda g: (
        _unbroadcast(np.matmul(g, np.swapaxes(b.values, -1, -2)), a.shape),
        _unbroadcast(np.matmul(np.swapaxes(a.values, -1, -2), g), b.shape),
    ))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight (+ bias); weight is (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, weight) if x.ndim >= 2 else reshape(matmul(reshape(x, (1, -1)), weight), (-1,))
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeMismatch(f"layer_norm: features {x.shape[-1]} vs gamma {gamma.shape} / beta {beta.shape}")
    n = x.shape[-1]
    mu = x.values.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(x.values.var(axis=-1, keepdims=True) + eps)
    x_hat = (x.values - mu) * inv_std
    out = x_hat * gamma.values + beta.values

    def backward(g):
        d_hat = g * gamma.values
        dx = inv_std / n * (n * d_hat - d_hat.sum(axis=-1, keepdims=True)
                            - x_hat * (d_hat * x_hat).sum(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return dx, (g * x_hat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# Convolutions (valid padding)
# ---------------------------------------------------------------------------

def conv_output_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1) -> Tensor:
    """x: (B, C_in, L); weight: (C_out, C_in, K) -> (B, C_out, L_out)."""
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1] or x.shape[2] < weight.shape[2]:
        raise ShapeMismatch(f"conv1d: input {x.shape} incompatible with filter {weight.shape}")
    k = weight.shape[2]
    length_out = conv_output_length(x.shape[2], k, stride)
    windows = sliding_window_view(x.values, k, axis=2)[:, :, ::stride, :]
    out = np.einsum("bclk,ock->bol", windows, weight.values, optimize=True)
    if bias is not None:
        out = out + bias.values[None, :, None]

    def backward(g):
        d_weight = np.einsum("bol,bclk->ock", g, windows, optimize=True)
        d_windows = np.einsum("bol,ock->bclk", g, weight.values, optimize=True)
        dx = np.zeros_like(x.values)
        span = stride * (length_out - 1) + 1
        for offset in range(k):
            dx[:, :, offset:offset + span:stride] += d_windows[..., offset]
        grads = [dx, d_weight]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1) -> Tensor:
    """x: (B, C_in, H, W); weight: (C_out, C_in, KH, KW) -> (B, C_out, H_out, W_out)."""
    if (x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]
            or x.shape[2] < weight.shape[2] or x.shape[3] < weight.shape[3]):
        raise ShapeMismatch(f"conv2d: input {x.shape} incompatible with filter {weight.shape}")
    kh, kw = weight.shape[2], weight.shape[3]
    h_out = conv_output_length(x.shape[2], kh, stride)
    w_out = conv_output_length(x.shape[3], kw, stride)
    windows = sliding_window_view(x.values, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bchwij,ocij->bohw", windows, weight.values, optimize=True)
    if bias is not None:
        out = out + bias.values[None, :, None, None]

    def backward(g):
        d_weight = np.einsum("bohw,bchwij->ocij", g, windows, optimize=True)
        d_windows = np.einsum("bohw,ocij->bchwij", g, weight.values, optimize=True)
        dx = np.zeros_like(x.values)
        span_h = stride * (h_out - 1) + 1
        span_w = stride * (w_out - 1) + 1
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + span_h:stride, j:j + span_w:stride] += d_windows[..., i, j]
        grads = [dx, d_weight]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


# ---------------------------------------------------------------------------
# Attention and losses
# ---------------------------------------------------------------------------

MASK_FILL = -1e9


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    softmax(q k^T / sqrt(d)) v over the last two axes. ``mask`` is boolean,
    broadcastable to (..., T_q, T_k), True where attention is allowed.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = div(matmul(q, swapaxes(k, -1, -2)), math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = masked_fill(scores, mask, MASK_FILL)
    return matmul(softmax(scores, axis=-1), v)


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def mse(pred: Tensor, target: ArrayLike) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: prediction {pred.shape} vs target {target.shape}")
    return mean(square(sub(pred, target)))


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of ``labels`` under (B, C) probabilities."""
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeMismatch(f"cross_entropy: probs {probs.shape} vs labels {labels.shape}")
    picked = getitem(probs, (np.arange(len(labels)), labels))
    return mul(mean(log(picked)), -1.0)

