"""Loss functions as fused nodes (forward value + closed-form gradient)."""

from __future__ import annotations

import numpy as np

from .core import ShapeError, Tensor, as_tensor, make_node

PROB_FLOOR = 1e-7


def _check(a: Tensor, b: Tensor, name: str):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def smooth_l1(gt, pre: Tensor) -> Tensor:
    """Mean over elements of 0.5 d^2 (|d| < 1) or |d| - 0.5, with d = gt - pre."""
    gt, pre = as_tensor(gt), as_tensor(pre)
    _check(gt, pre, "smooth_l1")
    n = max(pre.data.size, 1)
    d = pre.data - gt.data
    ad = np.abs(d)
    val = np.where(ad < 1, 0.5 * d * d, ad - 0.5).sum() / n
    dd = np.where(ad < 1, d, np.sign(d))

    def bw(g):
        return (-g * dd / n, g * dd / n)

    return make_node(np.asarray(val, dtype=pre.dtype), (gt, pre), bw, "smooth_l1")


def cross_entropy(gt_onehot, logits: Tensor, reduction: str = "sum") -> Tensor:
    """-sum gt * log softmax(logits) over the last axis; summed or averaged over rows."""
    gt, logits = as_tensor(gt_onehot), as_tensor(logits)
    _check(gt, logits, "cross_entropy")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = max(int(np.prod(logits.shape[:-1])), 1)
    div = rows if reduction == "mean" else 1
    val = -(gt.data * logp).sum() / div
    p = np.exp(logp)

    def bw(g):
        tsum = gt.data.sum(axis=-1, keepdims=True)
        return (-g * logp / div, g * (p * tsum - gt.data) / div)

    return make_node(np.asarray(val, dtype=logits.dtype), (gt, logits), bw, "cross_entropy")


def bce(gt, pre_prob: Tensor, reduction: str = "sum") -> Tensor:
    """Binary cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7]."""
    gt, pre = as_tensor(gt), as_tensor(pre_prob)
    _check(gt, pre, "bce")
    p = np.clip(pre.data, PROB_FLOOR, 1 - PROB_FLOOR)
    inside = (pre.data > PROB_FLOOR) & (pre.data < 1 - PROB_FLOOR)
    t = gt.data
    div = max(pre.data.size, 1) if reduction == "mean" else 1
    val = -(t * np.log(p) + (1 - t) * np.log(1 - p)).sum() / div

    def bw(g):
        dp = np.where(inside, (p - t) / (p * (1 - p)), 0)
        dt = -(np.log(p) - np.log(1 - p))
        return (g * dt / div, g * dp / div)

    return make_node(np.asarray(val, dtype=pre.dtype), (gt, pre), bw, "bce")


def bce_with_logits(gt, logits: Tensor, reduction: str = "sum", weight=None) -> Tensor:
    """BCE of sigmoid(logits), computed stably; optional per-element weights."""
    gt, x = as_tensor(gt), as_tensor(logits)
    _check(gt, x, "bce_with_logits")
    t = gt.data
    a = x.data
    w = np.ones_like(a) if weight is None else np.asarray(weight, dtype=a.dtype)
    if reduction == "mean":
        div = max(float(w.sum()), 1.0)
    else:
        div = 1.0
    # log(1 + e^-|a|) form avoids overflow; clamp matches the probability floor
    sp = np.maximum(a, 0) - a * t + np.log1p(np.exp(-np.abs(a)))
    val = (w * sp).sum() / div
    s = 1.0 / (1.0 + np.exp(-a))

    def bw(g):
        return (g * w * (-a) / div, g * w * (s - t) / div)

    return make_node(np.asarray(val, dtype=a.dtype), (gt, x), bw, "bce_with_logits")


def nll_relation(probs: Tensor, label, reduction: str = "sum") -> Tensor:
    """Negative log of the ground-truth class probability, per row of ``probs``."""
    probs = as_tensor(probs)
    label = np.asarray(label, dtype=np.int64).reshape(-1)
    pd = probs.data.reshape(-1, probs.shape[-1])
    if pd.shape[0] != label.shape[0]:
        raise ShapeError(f"nll_relation: {pd.shape[0]} rows but {label.shape[0]} labels")
    rows = np.arange(len(label))
    picked = pd[rows, label]
    v = np.maximum(picked, PROB_FLOOR)
    div = max(len(label), 1) if reduction == "mean" else 1
    val = -np.log(v).sum() / div
    shape = probs.shape

    def bw(g):
        gp = np.zeros_like(pd)
        gp[rows, label] = np.where(picked > PROB_FLOOR, -g / v, 0) / div
        return (gp.reshape(shape),)

    return make_node(np.asarray(val, dtype=probs.dtype), (probs,), bw, "nll_relation")
