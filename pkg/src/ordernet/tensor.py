"""Minimal dense tensors with reverse-mode gradients.

Only the operations the OrderNet model needs are provided. Each operation
records a closure that maps the output gradient to gradients for its
parents; :meth:`Tensor.backward` replays the tape in reverse topological
order and then frees it.

Computation runs in float32 by default. ``precision("float64")`` switches
the engine to 64-bit, which is what the gradient checks use.
"""

from __future__ import annotations

import contextlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "ParamStore",
    "AdamState",
    "BatchNormState",
    "ShapeError",
    "DegeneratePoolError",
    "get_dtype",
    "precision",
    "no_grad",
    "is_grad_enabled",
    "pointwise_linear",
    "causal_conv_1x3",
    "batch_norm",
    "relu_batch_norm",
    "pool_over_axis",
    "relu",
    "concat",
    "concat_last_axis",
    "gather_rows",
    "zero_diagonal",
    "broadcast_over_axis",
    "pair_tensor",
    "pair_linear",
    "masked_softmax_cross_entropy",
    "adam_step",
]

_PRECISIONS = {"float32": np.float32, "float64": np.float64}


class _Mode(threading.local):
    # per-thread so concurrent decoders cannot flip each other's settings
    dtype = np.float32
    grad_enabled = True


_mode = _Mode()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegeneratePoolError(ValueError):
    """A pooling fiber had every entry masked out."""


def get_dtype():
    return _mode.dtype


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the engine float width ("float32" or "float64")."""
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    previous = _mode.dtype
    _mode.dtype = _PRECISIONS[name]
    try:
        yield
    finally:
        _mode.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them on the tape."""
    previous = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = previous


def is_grad_enabled() -> bool:
    return _mode.grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _mode.dtype:
            arr = arr.astype(_mode.dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label})"

    # -- arithmetic with numpy broadcasting ------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return _record(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        return _record(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return _record(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _record(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return _record(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return _record(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    # -- reverse mode -----------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``requires_grad`` leaf.

        Intermediate results do not keep their gradients. Gradients add onto whatever is already stored, so call
        ``zero_grad`` (or let the optimizer do it) between steps.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            node._parents = ()
            node._backward = None


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor], back: Callable) -> Tensor:
    out = Tensor(data)
    if _mode.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = back
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# -- layers -----------------------------------------------------------------


def pointwise_linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-position linear map over the last axis (a 1x1 convolution)."""
    c_in, c_out = weight.shape
    if x.shape[-1] != c_in or bias.shape != (c_out,):
        raise ShapeError(
            f"pointwise_linear: input {x.shape} incompatible with weight {weight.shape} / bias {bias.shape}"
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, c_in)
    out = (x2 @ weight.data + bias.data).reshape(*lead, c_out)

    def back(g):
        g2 = g.reshape(-1, c_out)
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _record(out, (x, weight, bias), back)


def causal_conv_1x3(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Width-3 convolution along axis -2 with two steps of left zero padding.

    ``kernel[0]`` weights step t-2, ``kernel[1]`` step t-1 and ``kernel[2]``
    the current step, so output t never sees inputs after t. All other
    leading axes are treated independently (filter size 1).
    """
    if kernel.ndim != 3 or kernel.shape[0] != 3:
        raise ShapeError(f"causal_conv_1x3: kernel must be (3, C_in, C_out), got {kernel.shape}")
    _, c_in, c_out = kernel.shape
    if x.ndim < 2 or x.shape[-1] != c_in or bias.shape != (c_out,):
        raise ShapeError(
            f"causal_conv_1x3: input {x.shape} incompatible with kernel {kernel.shape} / bias {bias.shape}"
        )
    steps = x.shape[-2]
    lead = x.shape[:-1]
    # one matmul against the three taps side by side, then shift-and-add
    stacked = kernel.data.transpose(1, 0, 2).reshape(c_in, 3 * c_out)
    x2 = x.data.reshape(-1, c_in)
    taps = (x2 @ stacked).reshape(*lead, 3, c_out)
    out = taps[..., 2, :] + bias.data
    if steps > 1:
        out[..., 1:, :] += taps[..., :-1, 1, :]
    if steps > 2:
        out[..., 2:, :] += taps[..., :-2, 0, :]

    def back(g):
        g_taps = np.zeros(lead + (3, c_out), dtype=g.dtype)
        g_taps[..., 2, :] = g
        if steps > 1:
            g_taps[..., :-1, 1, :] = g[..., 1:, :]
        if steps > 2:
            g_taps[..., :-2, 0, :] = g[..., 2:, :]
        g2 = g_taps.reshape(-1, 3 * c_out)
        gx = (g2 @ stacked.T).reshape(x.shape) if x.requires_grad else None
        gk = None
        if kernel.requires_grad:
            gk = (x2.T @ g2).reshape(c_in, 3, c_out).transpose(1, 0, 2)
        gb = g.reshape(-1, c_out).sum(axis=0) if bias.requires_grad else None
        return gx, gk, gb

    return _record(out, (x, kernel, bias), back)


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=np.float64), np.ones(channels, dtype=np.float64))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalisation over every axis except the last.

    In training mode the batch statistics are used and folded into the
    running averages; in eval mode the running averages are used and the
    layer is a fixed affine map.
    """
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm: input {x.shape} incompatible with scale {gamma.shape} / shift {beta.shape}")
    x2 = x.data.reshape(-1, channels)
    eps = state.eps
    if not training:
        inv = (1.0 / np.sqrt(state.var + eps)).astype(x.data.dtype)
        mean = state.mean.astype(x.data.dtype)
        scale = gamma.data * inv
        out = ((x2 - mean) * scale + beta.data).reshape(x.shape)

        def back_eval(g):
            g2 = g.reshape(-1, channels)
            gx = (g2 * scale).reshape(x.shape) if x.requires_grad else None
            gg = (g2 * (x2 - mean) * inv).sum(axis=0) if gamma.requires_grad else None
            gb = g2.sum(axis=0) if beta.requires_grad else None
            return gx, gg, gb

        return _record(out, (x, gamma, beta), back_eval)

    count = x2.shape[0]
    mean = x2.mean(axis=0)
    centered = x2 - mean
    var = (centered * centered).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    m = state.momentum
    unbiased = var * (count / (count - 1)) if count > 1 else var
    state.mean = m * state.mean + (1.0 - m) * mean.astype(np.float64)
    state.var = m * state.var + (1.0 - m) * unbiased.astype(np.float64)

    def back_train(g):
        g2 = g.reshape(-1, channels)
        gg = (g2 * xhat).sum(axis=0)
        gb = g2.sum(axis=0)
        gx = None
        if x.requires_grad:
            dxhat = g2 * gamma.data
            gx = (inv / count) * (count * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            gx = gx.reshape(x.shape)
        return gx, gg if gamma.requires_grad else None, gb if beta.requires_grad else None

    return _record(out, (x, gamma, beta), back_train)


def relu_batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """``batch_norm(relu(x), ...)`` as one fused kernel (compiled when available)."""
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm: input {x.shape} incompatible with scale {gamma.shape} / shift {beta.shape}")
    x2 = np.ascontiguousarray(x.data.reshape(-1, channels))
    eps = state.eps
    if not training:
        inv = 1.0 / np.sqrt(state.var + eps)
        frozen_mean = state.mean.copy()
        scale = (gamma.data * inv).astype(x2.dtype)
        shift = (beta.data - frozen_mean * gamma.data * inv).astype(x2.dtype)
        positive = x2 > 0
        out = (np.maximum(x2, 0) * scale + shift).reshape(x.shape)

        def back_eval(g):
            g2 = g.reshape(-1, channels)
            gx = (g2 * scale * positive).reshape(x.shape) if x.requires_grad else None
            gg = (g2 * (np.maximum(x2, 0) - frozen_mean) * inv).sum(axis=0) if gamma.requires_grad else None
            gb = g2.sum(axis=0) if beta.requires_grad else None
            return gx, gg, gb

        return _record(out, (x, gamma, beta), back_eval)

    count = x2.shape[0]
    out = np.empty_like(x2)
    mean, var = kernels.relu_bn_forward(x2, gamma.data, beta.data, eps, out)
    m = state.momentum
    unbiased = var * (count / (count - 1)) if count > 1 else var
    state.mean = m * state.mean + (1.0 - m) * mean
    state.var = m * state.var + (1.0 - m) * unbiased

    def back_train(g):
        g2 = np.ascontiguousarray(g.reshape(-1, channels), dtype=x2.dtype)
        gx = np.empty_like(x2)
        gg, gb = kernels.relu_bn_backward(x2, g2, gamma.data, mean, var, eps, gx)
        return gx.reshape(x.shape), gg.astype(x2.dtype), gb.astype(x2.dtype)

    return _record(out.reshape(x.shape), (x, gamma, beta), back_train)


def pool_over_axis(
    x: Tensor,
    axis: int,
    kind: str = "max",
    exclude_mask: np.ndarray | None = None,
    keepdims: bool = False,
) -> Tensor:
    """Max or average over one axis, optionally ignoring masked entries.

    ``exclude_mask`` is True where an entry must not participate; it must
    broadcast against ``x``. Max gradients go to the first maximal entry.
    """
    axis = _axis(axis, x.ndim)
    if x.shape[axis] < 1:
        raise ShapeError(f"pool_over_axis: axis {axis} has extent 0")
    data = x.data
    keep = None
    if exclude_mask is not None:
        keep = ~np.broadcast_to(np.asarray(exclude_mask, dtype=bool), data.shape)
        counts = keep.sum(axis=axis, keepdims=True)
        if np.any(counts == 0):
            raise DegeneratePoolError("pool_over_axis: a fiber is entirely masked")
    if kind == "max":
        masked = data if keep is None else np.where(keep, data, -np.inf)
        idx = np.argmax(masked, axis=axis)[(slice(None),) * axis + (None,)]
        out = np.take_along_axis(data, idx, axis=axis)

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            gx = np.zeros_like(data)
            np.put_along_axis(gx, idx, g, axis=axis)
            return (gx,)

    elif kind == "avg":
        if keep is None:
            n = data.shape[axis]
            out = data.sum(axis=axis, keepdims=True) / n
            weights = None
        else:
            weights = keep / counts
            out = (data * weights).sum(axis=axis, keepdims=True)

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            if weights is None:
                gx = np.broadcast_to(g / data.shape[axis], data.shape).copy()
            else:
                gx = (g * weights).astype(data.dtype)
            return (gx,)

    else:
        raise ValueError(f"pool kind must be 'max' or 'avg', got {kind!r}")
    out = out.astype(data.dtype, copy=False)
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return _record(out, (x,), back)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return _record(np.where(positive, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * positive,))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    axis = _axis(axis, tensors[0].ndim)
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            a != b for k, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if k != axis
        ):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def concat_last_axis(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-1)


def gather_rows(x: Tensor, index) -> Tensor:
    """Select rows by index.

    A 1-d ``index`` selects along axis 0. A 2-d ``index`` of shape (B, K)
    gathers per batch entry along axis 1, i.e. ``out[b, k] = x[b, index[b, k]]``.
    """
    index = np.asarray(index, dtype=np.int64)
    if index.ndim == 1:
        extent = x.shape[0]
    elif index.ndim == 2:
        if x.ndim < 2 or x.shape[0] != index.shape[0]:
            raise ShapeError(f"gather_rows: batched index {index.shape} does not match input {x.shape}")
        extent = x.shape[1]
    else:
        raise ShapeError(f"gather_rows: index must be 1-d or 2-d, got {index.shape}")
    if index.size:
        bad = index[(index < 0) | (index >= extent)]
        if bad.size:
            raise IndexError(f"gather_rows: index {int(bad[0])} out of range for extent {extent}")
    if index.ndim == 1:
        out = x.data[index]

        def back(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, index, g)
            return (gx,)

    else:
        batch = np.arange(index.shape[0])[:, None]
        out = x.data[batch, index]

        def back(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, (batch, index), g)
            return (gx,)

    return _record(out, (x,), back)


def zero_diagonal(z: Tensor) -> Tensor:
    """Zero ``z[..., i, i, :]`` for a tensor shaped (..., n, n, C)."""
    if z.ndim < 3 or z.shape[-2] != z.shape[-3]:
        raise ShapeError(f"zero_diagonal needs (..., n, n, C), got {z.shape}")
    idx = np.arange(z.shape[-2])
    out = z.data.copy()
    out[..., idx, idx, :] = 0

    def back(g):
        g = g.copy()
        g[..., idx, idx, :] = 0
        return (g,)

    return _record(out, (z,), back)


def broadcast_over_axis(x: Tensor, axis: int, size: int) -> Tensor:
    """Replicate an extent-1 axis ``size`` times."""
    axis = _axis(axis, x.ndim)
    if x.shape[axis] != 1:
        raise ShapeError(f"broadcast_over_axis: axis {axis} of {x.shape} must have extent 1")
    shape = x.shape[:axis] + (size,) + x.shape[axis + 1 :]
    return _record(np.broadcast_to(x.data, shape), (x,), lambda g: (g.sum(axis=axis, keepdims=True),))


def pair_tensor(x: Tensor) -> Tensor:
    """Expand (..., n, D) into (..., n, n, 2D) with ``out[..., i, j] = [x_i, x_j]``."""
    if x.ndim < 2:
        raise ShapeError(f"pair_tensor needs (..., n, D), got {x.shape}")
    n, d = x.shape[-2:]
    full = x.shape[:-2] + (n, n, d)
    left = np.broadcast_to(x.data[..., :, None, :], full)
    right = np.broadcast_to(x.data[..., None, :, :], full)
    out = np.concatenate([left, right], axis=-1)

    def back(g):
        return (g[..., :d].sum(axis=-2) + g[..., d:].sum(axis=-3),)

    return _record(out, (x,), back)


def pair_linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``pointwise_linear(pair_tensor(x), weight, bias)`` without building the pair tensor.

    The weight rows split into a block acting on x_i and one acting on x_j,
    so the output is a broadcast sum of two (..., n, C_out) products.
    """
    n, d = x.shape[-2:]
    if weight.shape[0] != 2 * d or bias.shape != (weight.shape[1],):
        raise ShapeError(f"pair_linear: input {x.shape} incompatible with weight {weight.shape} / bias {bias.shape}")
    c_out = weight.shape[1]
    w_i, w_j = weight.data[:d], weight.data[d:]
    a = x.data @ w_i
    b = x.data @ w_j
    out = a[..., :, None, :] + b[..., None, :, :] + bias.data

    def back(g):
        g_i = g.sum(axis=-2)
        g_j = g.sum(axis=-3)
        gx = g_i @ w_i.T + g_j @ w_j.T if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            flat = x.data.reshape(-1, d)
            gw = np.concatenate([flat.T @ g_i.reshape(-1, c_out), flat.T @ g_j.reshape(-1, c_out)], axis=0)
        gb = g_i.reshape(-1, c_out).sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _record(out, (x, weight, bias), back)


def masked_softmax_cross_entropy(logits: Tensor, target, mask=None) -> Tensor:
    """Mean over positions of -log softmax(logits)[target] along the last axis.

    ``target`` has the shape of ``logits`` minus its last axis. ``mask``
    (same shape as logits) is True for entries treated as -inf.
    """
    z = logits.data
    target = np.asarray(target, dtype=np.int64)
    if target.shape != z.shape[:-1]:
        raise ShapeError(f"cross entropy: target {target.shape} does not match logits {z.shape}")
    if np.any((target < 0) | (target >= z.shape[-1])):
        raise IndexError(f"cross entropy: target index out of range for extent {z.shape[-1]}")
    t_idx = target[..., None]
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if np.any(np.take_along_axis(mask, t_idx, axis=-1)):
            raise ValueError("cross entropy: a target position is masked")
        z = np.where(mask, -np.inf, z)
    shifted = z - z.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=-1, keepdims=True)
    logp = shifted - np.log(total)
    picked = np.take_along_axis(logp, t_idx, axis=-1)
    count = target.size
    loss = np.asarray(-picked.sum() / count, dtype=z.dtype)

    def back(g):
        grad = exp / total
        np.put_along_axis(grad, t_idx, np.take_along_axis(grad, t_idx, axis=-1) - 1, axis=-1)
        return ((grad * (g / count)).astype(logits.data.dtype),)

    return _record(loss, (logits,), back)


# -- parameters and optimiser ------------------------------------------------


class ParamStore(OrderedDict):
    """Named learnable tensors in insertion order."""

    def add(self, name: str, value) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self[name] = t
        return t

    def count(self) -> int:
        return sum(t.size for t in self.values())

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState, clip_norm: float | None = None) -> None:
    """Bias-corrected Adam update of every parameter, then clear gradients."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    if clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params.values()))
        if total > clip_norm:
            for p in params.values():
                p.grad = p.grad * (clip_norm / total)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
        p.grad = None
