"""Differentiable operations on :class:`Tensor`.

Every op computes its forward value with numpy and registers a backward rule
returning one gradient per input. Shapes follow numpy broadcasting for the
elementwise ops; gradients are summed back to the operand shapes.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tape import decide, replaying
from .tensor import ShapeError, Tensor, as_tensor, make_op


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return make_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return make_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return make_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return make_op(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    return make_op(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)  # non-finite results are rejected by make_op
    return make_op(out, (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return make_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_op(
        a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),), "silu"
    )


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


# -- reductions and shape ---------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return make_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return make_op(a.data.T, (a,), lambda g: (g.T,), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_op(out, (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return make_op(out, ts, lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}") from None
    return make_op(
        out,
        ts,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))),
        "stack",
    )


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    return make_op(
        a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul"
    )


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < max(x.ndim, 1):
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (x,), backward, "softmax")


LAYER_NORM_EPS = 1e-5


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({d},)"
        )
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(square(centered), axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gain + bias


def attention(query, key, value, heads: int = 1) -> Tensor:
    """Scaled dot-product attention, ``softmax(q k^T / sqrt(d_head)) v``."""
    query, key, value = as_tensor(query), as_tensor(key), as_tensor(value)
    if query.ndim != 2 or key.ndim != 2 or value.ndim != 2:
        raise ShapeError("attention expects 2-D query/key/value")
    d = query.shape[1]
    if key.shape[1] != d or value.shape[1] != d or key.shape[0] != value.shape[0]:
        raise ShapeError(
            f"attention: query {query.shape}, key {key.shape}, value {value.shape} disagree"
        )
    if heads < 1 or d % heads:
        raise ShapeError(f"attention: width {d} not divisible by {heads} heads")
    dh = d // heads
    outs = []
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        q, k, v = query[:, cols], key[:, cols], value[:, cols]
        w = softmax(matmul(q, transpose(k)) * (1.0 / math.sqrt(dh)), axis=-1)
        outs.append(matmul(w, v))
    return outs[0] if heads == 1 else concat(outs, axis=1)


# -- sequence helpers -------------------------------------------------------

def unfold_rows(x, kernel: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Sliding windows over the first axis: ``[T, C] -> [T_out, kernel*C]``.

    Rows outside the sequence read as zero. ``T_out = (T + 2*pad - kernel)//stride + 1``.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"unfold_rows expects [T, C], got {x.shape}")
    t, c = x.shape
    n_out = (t + 2 * pad - kernel) // stride + 1
    if n_out < 1:
        raise ShapeError(f"unfold_rows: sequence of {t} too short for kernel {kernel}")
    padded = np.zeros((t + 2 * pad, c))
    padded[pad : pad + t] = x.data
    idx = np.arange(n_out)[:, None] * stride + np.arange(kernel)[None, :]
    out = padded[idx].reshape(n_out, kernel * c)

    def backward(g):
        gp = np.zeros_like(padded)
        np.add.at(gp, idx, g.reshape(n_out, kernel, c))
        return (gp[pad : pad + t],)

    return make_op(out, (x,), backward, "unfold_rows")


def repeat_rows(x, repeats: int) -> Tensor:
    """Nearest-neighbour upsampling along the first axis."""
    x = as_tensor(x)
    out = np.repeat(x.data, repeats, axis=0)

    def backward(g):
        return (g.reshape(x.shape[0], repeats, *x.shape[1:]).sum(axis=1),)

    return make_op(out, (x,), backward, "repeat_rows")


def gather_rows(table, indices) -> Tensor:
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_op(table.data[idx], (table,), backward, "gather_rows")


# -- gradient routing -------------------------------------------------------

def stop_gradient(x) -> Tensor:
    """Forward identity; blocks gradient flow into ``x``."""
    x = as_tensor(x)
    return Tensor(decide(x.data), op="stop_gradient")


def straight_through(x, target) -> Tensor:
    """Forward value of ``target``; backward identity into ``x``.

    Equivalent to ``x + sg(target - x)``; the forward value is ``target``
    exactly, except under decision replay where the recorded offset is added
    to the perturbed ``x`` so finite differences see the identity Jacobian.
    """
    x = as_tensor(x)
    target = as_tensor(target).data
    if target.shape != x.shape:
        raise ShapeError(f"straight_through: {x.shape} vs target {target.shape}")
    offset = decide(target - x.data)
    out = x.data + offset if replaying() else target
    return make_op(out, (x,), lambda g: (g,), "straight_through")
