"""Differentiable operators. Shapes are explicit; only bias-add broadcasts."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError, Tensor, as_tensor, make_node


class EmptyRoiError(ValueError):
    pass


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _same_shape(x, y, "add")
    return make_node(x.data + y.data, (x, y), lambda g: (g, g), "add")


def sub(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _same_shape(x, y, "sub")
    return make_node(x.data - y.data, (x, y), lambda g: (g, -g), "sub")


def mul(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _same_shape(x, y, "mul")
    xd, yd = x.data, y.data
    return make_node(xd * yd, (x, y), lambda g: (g * yd, g * xd), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    return make_node(x.data * x.data.dtype.type(c), (x,), lambda g: (g * c,), "scale")


def add_n(xs: Sequence[Tensor]) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    for x in xs[1:]:
        _same_shape(xs[0], x, "add_n")
    out = xs[0].data.copy()
    for x in xs[1:]:
        out = out + x.data
    return make_node(out, xs, lambda g: [g] * len(xs), "add_n")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_node(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.full(shape, g, dtype=g.dtype),), "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.shape
    return make_node(
        np.asarray(x.data.mean(), dtype=x.dtype), (x,), lambda g: (np.full(shape, g / n, dtype=g.dtype),), "mean"
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return make_node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def index(x: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing with scatter-add backward."""
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return make_node(x.data[idx], (x,), bw, "index")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return make_node(e, (x,), lambda g: (g * e,), "exp")


def log(x: Tensor, floor: float = 1e-7) -> Tensor:
    """Natural log with the input clamped at ``floor`` (no gradient below it)."""
    clamped = x.data < floor
    v = np.maximum(x.data, floor)
    return make_node(np.log(v), (x,), lambda g: (np.where(clamped, 0, g / v).astype(g.dtype),), "log")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s, (x,), bw, "softmax")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = list(xs[0].shape)
    for x in xs[1:]:
        s = list(x.shape)
        if len(s) != len(ref) or any(a != b for k, (a, b) in enumerate(zip(s, ref)) if k != axis % len(ref)):
            raise ShapeError(f"concat: incompatible shapes {xs[0].shape} and {x.shape} on axis {axis}")
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return np.split(g, cuts, axis=axis)

    return make_node(np.concatenate([x.data for x in xs], axis=axis), xs, bw, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    if int(np.sum(sizes)) != x.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover axis of length {x.shape[axis]}")
    out = []
    start = 0
    for n in sizes:
        sl = [slice(None)] * x.data.ndim
        sl[axis] = slice(start, start + n)
        out.append(index(x, tuple(sl)))
        start += n
    return out


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x`` (N, in) @ ``w`` (out, in).T + ``b`` (out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: x {x.shape} incompatible with w {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match {w.shape[0]} outputs")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    def bw(g):
        grads = [g @ wd, g.T @ xd]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, bw, "linear")


def _pad(a: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input, OIHW weights."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: x {x.shape} incompatible with w {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {w.shape[0]} outputs")
    n, c, hgt, wid = x.shape
    o, _, kh, kw = w.shape
    ho = (hgt + 2 * pad - kh) // stride + 1
    wo = (wid + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape}")
    xp = _pad(x.data, pad)
    if kh == 1 and kw == 1:
        xs = xp[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
        cols = xs.transpose(0, 2, 3, 1).reshape(n * ho * wo, c)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    xshape, xpshape = x.shape, xp.shape
    wshape = w.shape

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        grads = []
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros(xpshape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            grads.append(dxp[:, :, pad : pad + xshape[2], pad : pad + xshape[3]] if pad else dxp)
        else:
            grads.append(None)
        grads.append((g2.T @ cols).reshape(wshape))
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, bw, "conv2d")


def maxpool2d(x: Tensor, k: int, stride: Optional[int] = None) -> Tensor:
    stride = stride or k
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: expected NCHW, got {x.shape}")
    n, c, hgt, wid = x.shape
    ho = (hgt - k) // stride + 1
    wo = (wid - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"maxpool2d: window {k} larger than input {x.shape}")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                sel = np.where(arg == i * k + j, g, 0)
                gx[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += sel
        return (gx,)

    return make_node(np.ascontiguousarray(out), (x,), bw, "maxpool2d")


def upsample_nearest(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    n, c, hgt, wid = x.shape
    oh, ow = out_hw
    ri = (np.arange(oh) * hgt) // oh
    ci = (np.arange(ow) * wid) // ow
    out = x.data[:, :, ri][:, :, :, ci]
    shape = x.shape

    def bw(g):
        gr = np.zeros((n, c, hgt, ow), dtype=g.dtype)
        np.add.at(gr, (slice(None), slice(None), ri), g)
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), slice(None), ci), gr)
        return (gx,)

    return make_node(out, (x,), bw, "upsample_nearest")


def _bins(length: int, n_out: int) -> list[tuple[int, int]]:
    return [(math.floor(i * length / n_out), math.ceil((i + 1) * length / n_out)) for i in range(n_out)]


def _adaptive_max_region(region: np.ndarray, out_hw: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Max over an (C, h, w) region on an out_hw grid; also returns source row/col per output cell."""
    c, h, w = region.shape
    oh, ow = out_hw
    rb, cb = _bins(h, oh), _bins(w, ow)
    rowmax = np.empty((c, oh, w), dtype=region.dtype)
    rowarg = np.empty((c, oh, w), dtype=np.int64)
    for i, (r0, r1) in enumerate(rb):
        blk = region[:, r0:r1, :]
        a = blk.argmax(axis=1)
        rowarg[:, i, :] = a + r0
        rowmax[:, i, :] = np.take_along_axis(blk, a[:, None, :], axis=1)[:, 0, :]
    out = np.empty((c, oh, ow), dtype=region.dtype)
    src_r = np.empty((c, oh, ow), dtype=np.int64)
    src_c = np.empty((c, oh, ow), dtype=np.int64)
    for j, (c0, c1) in enumerate(cb):
        blk = rowmax[:, :, c0:c1]
        a = blk.argmax(axis=2)
        out[:, :, j] = np.take_along_axis(blk, a[:, :, None], axis=2)[:, :, 0]
        col = a + c0
        src_c[:, :, j] = col
        src_r[:, :, j] = np.take_along_axis(rowarg, col[:, :, None], axis=2)[:, :, 0]
    return out, src_r, src_c


def roi_pool(x: Tensor, rois: np.ndarray, out_hw: tuple[int, int]) -> Tensor:
    """Adaptive max pooling of feature-map regions.

    ``rois`` is (R, 5): batch index, then x1, y1, x2, y2 in feature-map cells
    (continuous). Each box is clipped to the map and snapped outward to whole
    cells; the result is (R, C, oh, ow).
    """
    rois = np.asarray(rois, dtype=float).reshape(-1, 5)
    n, c, hgt, wid = x.shape
    oh, ow = out_hw
    out = np.empty((len(rois), c, oh, ow), dtype=x.dtype)
    flat_idx = np.empty((len(rois), c, oh, ow), dtype=np.int64)
    chan = np.arange(c)[:, None, None]
    for r, (bi, x1, y1, x2, y2) in enumerate(rois):
        bi = int(bi)
        c0 = max(0, int(math.floor(x1)))
        r0 = max(0, int(math.floor(y1)))
        c1 = min(wid, int(math.ceil(x2)))
        r1 = min(hgt, int(math.ceil(y2)))
        if c1 <= c0 or r1 <= r0:
            raise EmptyRoiError(f"roi {r} ({x1:.2f},{y1:.2f},{x2:.2f},{y2:.2f}) has no area inside {hgt}x{wid} map")
        region = x.data[bi, :, r0:r1, c0:c1]
        o, sr, sc = _adaptive_max_region(region, out_hw)
        out[r] = o
        flat_idx[r] = ((bi * c + chan) * hgt + (sr + r0)) * wid + (sc + c0)
    shape = x.shape

    def bw(g):
        gx = np.zeros(int(np.prod(shape)), dtype=g.dtype)
        np.add.at(gx, flat_idx.reshape(-1), g.reshape(-1))
        return (gx.reshape(shape),)

    return make_node(out, (x,), bw, "roi_pool")


def adaptive_maxpool2d(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Whole-map adaptive max pooling; works for non-integer size ratios."""
    n, c, hgt, wid = x.shape
    if hgt % out_hw[0] == 0 and wid % out_hw[1] == 0 and hgt // out_hw[0] == wid // out_hw[1]:
        return maxpool2d(x, hgt // out_hw[0])
    rois = np.array([[b, 0, 0, wid, hgt] for b in range(n)], dtype=float)
    return roi_pool(x, rois, out_hw)
