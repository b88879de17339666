"""Dense tensors with reverse-mode gradients.

A `Tensor` wraps a contiguous float32 (or float64) ndarray plus an optional
gradient buffer. Operations executed while a `Tape` is active record their
backward rules on it; `backward(loss, tape)` replays the rules in reverse
order and accumulates gradients additively into every tensor on the path.

Conventions:
  * model state is float32; explicit reductions (sum/mean/softmax
    normalizers, norm statistics) accumulate in float64,
  * conv2d uses the cross-correlation convention with zero padding,
  * dropout is inverted (scaling happens at train time) and draws its mask
    from a counter-based stream keyed by (seed, layer id, step),
  * broadcasting is limited to bias-style adds/gains; general elementwise
    ops require equal shapes.
"""

from __future__ import annotations

import math
import os
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import ConfigError, DataError, DimensionError, UsageError
from .rng import keyed_rng

_DEBUG_NAN_CHECK = bool(os.environ.get("MMFUSION_DEBUG"))

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def set_debug(enabled: bool) -> None:
    """Toggle the NaN check applied to every op result."""
    global _DEBUG_NAN_CHECK
    _DEBUG_NAN_CHECK = enabled


class Tensor:
    """Dense n-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the real work lives in the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


# --------------------------------------------------------------------------
# tape

class Tape:
    """Ordered record of forward ops; replayed in reverse by backward()."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: Callable) -> None:
        self._entries.append((out, inputs, rule))

    def __len__(self) -> int:
        return len(self._entries)

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.pop()

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


_ACTIVE_TAPES: list[Tape] = []


def _finalize(out: Tensor, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    """Attach `out` to the active tape when any input is on the grad path."""
    if _DEBUG_NAN_CHECK and np.isnan(out.data).any():
        raise FloatingPointError("NaN produced by a forward op")
    if _ACTIVE_TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPES[-1].record(out, inputs, rule)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate grad buffers of every tensor reachable from `loss`."""
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, inputs, rule in reversed(tape._entries):
        g = out.grad
        if g is None:
            continue
        grads = rule(g)
        for t, gi in zip(inputs, grads):
            if gi is not None and t.requires_grad:
                t.accumulate_grad(gi)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# --------------------------------------------------------------------------
# op helpers

def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _same_dtype(a: Tensor, b: Tensor) -> None:
    if a.dtype != b.dtype:
        raise UsageError(f"dtype mismatch: {a.dtype} vs {b.dtype}")


# --------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D x 2-D, batched x 2-D, or batched x batched with
    identical leading dimensions."""
    _same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {list(a.shape)} x {list(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions differ: {list(a.shape)} x {list(b.shape)}"
        )
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(
            f"matmul batch dimensions differ: {list(a.shape)} x {list(b.shape)}"
        )
    out = Tensor(np.matmul(a.data, b.data))

    def rule(g: np.ndarray):
        if b.ndim == 2:
            da = np.matmul(g, b.data.T)
            k = a.shape[-1]
            a2 = a.data.reshape(-1, k)
            g2 = g.reshape(-1, g.shape[-1])
            db = np.matmul(a2.T, g2)
        else:
            da = np.matmul(g, np.swapaxes(b.data, -1, -2))
            db = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return da, db

    return _finalize(out, (a, b), rule)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(np.transpose(x.data, axes)))
    inv = tuple(np.argsort(axes))

    def rule(g: np.ndarray):
        return (np.transpose(g, inv),)

    return _finalize(out, (x,), rule)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))
    orig = x.shape

    def rule(g: np.ndarray):
        return (g.reshape(orig),)

    return _finalize(out, (x,), rule)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along `axis`."""
    axis = axis % x.ndim
    if start < 0 or start + length > x.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} of {list(x.shape)}"
        )
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(np.ascontiguousarray(x.data[idx]))

    def rule(g: np.ndarray):
        dx = np.zeros_like(x.data)
        dx[idx] = g
        return (dx,)

    return _finalize(out, (x,), rule)


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    """Concatenate along `axis`; all other axes must agree."""
    _same_dtype(a, b)
    if a.ndim != b.ndim:
        raise DimensionError(f"concat rank mismatch: {list(a.shape)} vs {list(b.shape)}")
    axis = axis % a.ndim if a.ndim else 0
    for i, (da, db) in enumerate(zip(a.shape, b.shape)):
        if i != axis and da != db:
            raise DimensionError(
                f"concat shapes incompatible off axis {axis}: {list(a.shape)} vs {list(b.shape)}"
            )
    out = Tensor(np.concatenate([a.data, b.data], axis=axis))
    na = a.shape[axis]

    def rule(g: np.ndarray):
        ga, gb = np.split(g, [na], axis=axis)
        return np.ascontiguousarray(ga), np.ascontiguousarray(gb)

    return _finalize(out, (a, b), rule)


# --------------------------------------------------------------------------
# elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. Equal shapes, or a bias-style broadcast where the
    smaller operand expands over leading/size-1 axes."""
    _same_dtype(a, b)
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(f"add shapes incompatible: {list(a.shape)} + {list(b.shape)}") from e
    if out_shape != a.shape and out_shape != b.shape:
        raise DimensionError(
            f"add would broadcast both operands: {list(a.shape)} + {list(b.shape)}"
        )
    out = Tensor(a.data + b.data)

    def rule(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finalize(out, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; same broadcast contract as add (gain-style)."""
    _same_dtype(a, b)
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(f"mul shapes incompatible: {list(a.shape)} * {list(b.shape)}") from e
    if out_shape != a.shape and out_shape != b.shape:
        raise DimensionError(
            f"mul would broadcast both operands: {list(a.shape)} * {list(b.shape)}"
        )
    out = Tensor(a.data * b.data)

    def rule(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _finalize(out, (a, b), rule)


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * x.dtype.type(c))

    def rule(g: np.ndarray):
        return (g * c,)

    return _finalize(out, (x,), rule)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def rule(g: np.ndarray):
        return (g * (x.data > 0),)

    return _finalize(out, (x,), rule)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor((x.data * cdf).astype(x.dtype, copy=False))

    def rule(g: np.ndarray):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * np.square(x.data.astype(np.float64)))
        return (g * (cdf + x.data * pdf).astype(x.dtype, copy=False),)

    return _finalize(out, (x,), rule)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along `axis`; slices sum to 1."""
    axis = axis % x.ndim
    if axis >= x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=axis, keepdims=True, dtype=np.float64)
    y = (e / denom).astype(x.dtype, copy=False)
    out = Tensor(y)

    def rule(g: np.ndarray):
        dot = (g * y).sum(axis=axis, keepdims=True, dtype=np.float64)
        return ((y * (g - dot)).astype(x.dtype, copy=False),)

    return _finalize(out, (x,), rule)


def normalize(x: Tensor, n_axes: int = 1, epsilon: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization over the trailing `n_axes` axes.

    n_axes=1 on [.., D] is layer norm; n_axes=2 on [.., C, H, W] normalizes
    each channel plane independently of the batch.
    """
    if n_axes < 1 or n_axes > x.ndim:
        raise DimensionError(f"normalize over {n_axes} axes of a rank-{x.ndim} tensor")
    axes = tuple(range(x.ndim - n_axes, x.ndim))
    mean = x.data.mean(axis=axes, keepdims=True, dtype=np.float64)
    centered = x.data.astype(np.float64) - mean
    var = np.square(centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    y64 = centered * inv
    out = Tensor(y64.astype(x.dtype, copy=False))

    def rule(g: np.ndarray):
        g64 = g.astype(np.float64)
        gm = g64.mean(axis=axes, keepdims=True)
        gym = (g64 * y64).mean(axis=axes, keepdims=True)
        dx = inv * (g64 - gm - y64 * gym)
        return (dx.astype(x.dtype, copy=False),)

    return _finalize(out, (x,), rule)


def dropout(x: Tensor, rate: float, training: bool, seed: int = 0, layer_id: int = 0,
            step: int = 0) -> Tensor:
    """Inverted dropout: kept units scale by 1/(1-rate) when training; the
    identity at inference. The mask stream is keyed by (seed, layer_id, step)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = keyed_rng(seed, "dropout", layer_id, step)
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale_arr = keep / x.dtype.type(1.0 - rate)
    out = Tensor(x.data * scale_arr)

    def rule(g: np.ndarray):
        return (g * scale_arr,)

    return _finalize(out, (x,), rule)


# --------------------------------------------------------------------------
# convolution and pooling

def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B?, Cin, H, W] with kernels [Cout, Cin, kh, kw]."""
    _same_dtype(x, w)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise DimensionError(
            f"conv2d expects [B,C,H,W] and [Cout,Cin,kh,kw], got {list(x.shape)} and {list(w.shape)}"
        )
    _, cin, h, wd = xd.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise DimensionError(
            f"conv2d channel mismatch: input {list(x.shape)} vs kernels {list(w.shape)}"
        )
    if kh > h + 2 * padding or kw > wd + 2 * padding:
        raise DimensionError(
            f"kernel {list(w.shape)} larger than padded input {list(x.shape)} (padding={padding})"
        )
    out_arr = kernels.conv2d_forward(xd, w.data, stride, padding)
    out = Tensor(out_arr[0] if squeeze else out_arr)

    def rule(g: np.ndarray):
        gd = g[None] if squeeze else g
        dx, dw = kernels.conv2d_backward(xd, w.data, np.ascontiguousarray(gd), stride, padding)
        return (dx[0] if squeeze else dx), dw

    return _finalize(out, (x, w), rule)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial plane: [B?, C, H, W] -> [B?, C]."""
    if x.ndim not in (3, 4):
        raise DimensionError(f"global_avg_pool expects [C,H,W] or [B,C,H,W], got {list(x.shape)}")
    h, w = x.shape[-2], x.shape[-1]
    out = Tensor(x.data.mean(axis=(-2, -1), dtype=np.float64).astype(x.dtype))

    def rule(g: np.ndarray):
        gx = np.broadcast_to(g[..., None, None] / (h * w), x.shape)
        return (gx.astype(x.dtype, copy=False),)

    return _finalize(out, (x,), rule)


# --------------------------------------------------------------------------
# reductions and lookups

def tsum(x: Tensor) -> Tensor:
    out = Tensor(np.array(x.data.sum(dtype=np.float64), dtype=x.dtype))

    def rule(g: np.ndarray):
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False),)

    return _finalize(out, (x,), rule)


def tmean(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(np.array(x.data.mean(dtype=np.float64), dtype=x.dtype))

    def rule(g: np.ndarray):
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=False),)

    return _finalize(out, (x,), rule)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids [..] -> [.., D]. Gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(
            f"token id out of range [0, {table.shape[0]}): min {ids.min()}, max {ids.max()}"
        )
    out = Tensor(table.data[ids])

    def rule(g: np.ndarray):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (dt,)

    return _finalize(out, (table,), rule)


def cross_entropy_from_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean categorical cross-entropy, log-sum-exp stabilized.

    logits [C] or [B, C]; labels scalar or [B] of class indices.
    Gradient at the logits is (softmax - onehot) / B.
    """
    ld = logits.data if logits.ndim == 2 else logits.data[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b, c = ld.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {list(labels.shape)} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label out of range [0, {c}): {labels[(labels < 0) | (labels >= c)][0]}")
    z = ld.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    losses = lse - z[np.arange(b), labels]
    out = Tensor(np.array(losses.mean(), dtype=logits.dtype))

    probs = np.exp(z - lse[:, None])

    def rule(g: np.ndarray):
        dz = probs.copy()
        dz[np.arange(b), labels] -= 1.0
        dz *= g.item() / b
        dz = dz.astype(logits.dtype, copy=False)
        return (dz if logits.ndim == 2 else dz[0],)

    return _finalize(out, (logits,), rule)
