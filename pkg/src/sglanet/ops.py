"""Differentiable kernels.

Every function takes and returns :class:`~sglanet.tensor.Tensor` objects,
computes its forward pass eagerly with numpy and registers an explicit
backward closure.  Image tensors are ``[batch, channel, height, width]``.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import LabelError, ShapeError
from .tensor import Tensor, as_tensor, check_precision, make_result


def _require_rank(op: str, t: Tensor, rank: int) -> None:
    if t.ndim != rank:
        raise ShapeError(op, f"expected rank {rank}, got shape {t.shape}")


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach it."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    if len(a) != len(b):
        raise ShapeError(op, f"rank mismatch {a} vs {b}")
    out = []
    for axis, (x, y) in enumerate(zip(a, b)):
        if x != y and x != 1 and y != 1:
            raise ShapeError(op, f"cannot broadcast {a} with {b}", axis=axis, expected=x, got=y)
        out.append(max(x, y))
    return tuple(out)


# -- elementwise ---------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = a.data + np.asarray(b, dtype=a.dtype)
        return make_result("add", out, (a,), lambda g: (g,))
    check_precision("add", a, b)
    _broadcast_shape("add", a.shape, b.shape)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a constant scalar."""
    f = a.dtype.type(factor)
    return make_result("scale", a.data * f, (a,), lambda g: (g * f,))


def broadcast_mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; axes of extent 1 expand to match the other operand."""
    check_precision("broadcast_mul", a, b)
    _broadcast_shape("broadcast_mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result("broadcast_mul", ad * bd, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", np.where(mask, x.data, x.dtype.type(0)), (x,), lambda g: (g * mask,))


def bounded_tanh(x: Tensor, bound: float) -> Tensor:
    """``bound * tanh(x)``, clipped so the result stays strictly inside (-bound, bound)."""
    th = np.tanh(x.data)
    lim = np.nextafter(x.dtype.type(bound), x.dtype.type(0))
    out = np.clip(x.dtype.type(bound) * th, -lim, lim)
    return make_result("bounded_tanh", out, (x,), lambda g: (g * x.dtype.type(bound) * (1 - th * th),))


# -- shape plumbing --------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return make_result("reshape", out, (x,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat", "needs at least one input")
    check_precision("concat", *tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref):
            raise ShapeError("concat", f"rank mismatch {ref} vs {t.shape}")
        for ax, (p, q) in enumerate(zip(ref, t.shape)):
            if ax != axis % len(ref) and p != q:
                raise ShapeError("concat", f"extent mismatch {ref} vs {t.shape}", axis=ax, expected=p, got=q)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=1)


def repeat_batch(x: Tensor, times: int) -> Tensor:
    """Repeat each batch item ``times`` times consecutively (item-major)."""
    out = np.repeat(x.data, times, axis=0)
    n = x.shape[0]

    def backward(g):
        return (g.reshape((n, times) + x.shape[1:]).sum(axis=1),)

    return make_result("repeat_batch", out, (x,), backward)


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    """Maximum along ``axis``; ties route the gradient to the lowest index."""
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return make_result("max_over_axis", out, (x,), backward)


# -- pooling -----------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over each ``h x w`` plane -> ``[n, c, 1, 1]``."""
    _require_rank("global_avg_pool", x, 4)
    h, w = x.shape[2], x.shape[3]
    out = x.data.mean(axis=(2, 3), keepdims=True)
    inv = x.dtype.type(1.0 / (h * w))

    def backward(g):
        return (np.broadcast_to(g * inv, x.shape).copy(),)

    return make_result("global_avg_pool", out, (x,), backward)


def channel_mean(x: Tensor) -> Tensor:
    """Mean across channels at each spatial site -> ``[n, 1, h, w]``."""
    _require_rank("channel_mean", x, 4)
    c = x.shape[1]
    out = x.data.mean(axis=1, keepdims=True)
    inv = x.dtype.type(1.0 / c)

    def backward(g):
        return (np.broadcast_to(g * inv, x.shape).copy(),)

    return make_result("channel_mean", out, (x,), backward)


def _windows(data: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(data, (k, k) if isinstance(k, int) else k, axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :ho, :wo]


def max_pool(x: Tensor, k: int, stride: Optional[int] = None, pad: int = 0) -> Tensor:
    """Max pooling with ``-inf`` padding; the first maximal element in a window wins ties."""
    _require_rank("max_pool", x, 4)
    stride = stride or k
    n, c, h, w = x.shape
    if h + 2 * pad < k:
        raise ShapeError("max_pool", f"window {k} larger than padded height {h + 2 * pad}", axis=2)
    if w + 2 * pad < k:
        raise ShapeError("max_pool", f"window {k} larger than padded width {w + 2 * pad}", axis=3)
    xp = x.data
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    flat = _windows(xp, k, stride, ho, wo).reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        rows = np.arange(ho)[:, None] * stride + arg // k
        cols = np.arange(wo)[None, :] * stride + arg % k
        plane = (np.arange(n)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (hp * wp)
        index = (plane + rows * wp + cols).ravel()
        gp = np.bincount(index, weights=g.ravel(), minlength=n * c * hp * wp)
        gp = gp.reshape(n, c, hp, wp).astype(x.dtype)
        return (gp[:, :, pad:pad + h, pad:pad + w].copy(),)

    return make_result("max_pool", np.ascontiguousarray(out), (x,), backward)


# -- affine maps ---------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding, via im2col and one matrix product."""
    _require_rank("conv2d", x, 4)
    _require_rank("conv2d", weight, 4)
    n, ci, h, w = x.shape
    co, wci, kh, kw = weight.shape
    if wci != ci:
        raise ShapeError("conv2d", f"input has {ci} channels but weight expects {wci}", axis=1, expected=wci, got=ci)
    if h + 2 * pad < kh:
        raise ShapeError("conv2d", f"kernel height {kh} exceeds padded height {h + 2 * pad}", axis=2)
    if w + 2 * pad < kw:
        raise ShapeError("conv2d", f"kernel width {kw} exceeds padded width {w + 2 * pad}", axis=3)
    inputs = [x, weight]
    if bias is not None:
        if bias.shape != (co,):
            raise ShapeError("conv2d", f"bias shape {bias.shape} != ({co},)", axis=0, expected=co, got=bias.shape)
        inputs.append(bias)
    check_precision("conv2d", *inputs)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if kh == 1 and kw == 1 and stride == 1:
        cols = xp.transpose(0, 2, 3, 1).reshape(n * ho * wo, ci)
    else:
        win = _windows(xp, (kh, kw), stride, ho, wo)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, ci * kh * kw)
    wmat = weight.data.reshape(co, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2))

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gw = (gm.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(n, ho, wo, ci, kh, kw)
            gxp = np.zeros((n, ci, hp, wp), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)

    return make_result("conv2d", out, tuple(inputs), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape ``[n, d]`` and weight ``[k, d]``."""
    _require_rank("linear", x, 2)
    _require_rank("linear", weight, 2)
    if x.shape[1] != weight.shape[1]:
        raise ShapeError("linear", f"input width {x.shape[1]} != weight width {weight.shape[1]}",
                         axis=1, expected=weight.shape[1], got=x.shape[1])
    inputs = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear", f"bias shape {bias.shape} != ({weight.shape[0]},)", axis=0)
        inputs.append(bias)
    check_precision("linear", *inputs)
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_result("linear", out, tuple(inputs), backward)


# -- loss ------------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    _require_rank("softmax_cross_entropy", logits, 2)
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError("softmax_cross_entropy", f"{labels.shape[0]} labels for {n} rows", axis=0)
    bad = (labels < 0) | (labels >= k)
    if bad.any():
        raise LabelError(int(labels[bad][0]), k)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = (np.log(s[:, 0]) - z[rows, labels]).mean()

    def backward(g):
        p = e / s
        p[rows, labels] -= 1
        return (p * (g / n),)

    return make_result("softmax_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def tensor(data, dtype=None, requires_grad: bool = False) -> Tensor:
    t = as_tensor(data, dtype=dtype)
    t.requires_grad = requires_grad
    return t
