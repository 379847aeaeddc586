"""The built-in gradient suite: every differentiable op checked over several seeds.

Each case builds random inputs for a seed and a scalar-valued function that
looks its op up at call time, so :func:`corrupt_backward` can swap in a
deliberately wrong gradient rule to prove the checker notices.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from . import losses as L
from . import ops
from .core import Tensor, make_node
from .gradcheck import GradCheckReport, grad_check

# distinct values at least this far apart keep max-style ops away from ties
SPACING = 0.01


@dataclass
class Case:
    name: str
    module: object
    build: Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[np.ndarray], Optional[list]]]


def _op(module, name):
    return getattr(module, name)


def _distinct(rng, shape) -> np.ndarray:
    n = int(np.prod(shape))
    return (rng.permutation(n) * SPACING - n * SPACING / 2).reshape(shape)


def _weighted(out: Tensor, rng_w: np.ndarray) -> Tensor:
    """Random projection to a scalar so every output entry affects the loss differently."""
    return ops.sum_all(ops.mul(out, Tensor(rng_w.astype(out.dtype))))


def _unary(name, module=ops, shape=(2, 3, 4), lo=-2.0, hi=2.0, kink=None, **kw):
    def build(rng):
        x = rng.uniform(lo, hi, size=shape)
        w = rng.normal(size=_op(module, name)(Tensor(x), **kw).shape)
        excl = [np.abs(x - kink) < 1e-2] if kink is not None else None
        return (lambda t: _weighted(_op(module, name)(t, **kw), w)), [x], excl

    return Case(name, module, build)


def _binary(name, shape=(3, 4)):
    def build(rng):
        x, y = rng.normal(size=shape), rng.normal(size=shape)
        w = rng.normal(size=shape)
        return (lambda a, b: _weighted(_op(ops, name)(a, b), w)), [x, y], None

    return Case(name, ops, build)


def _case_scale(rng):
    x = rng.normal(size=(3, 5))
    c, w = float(rng.normal()), rng.normal(size=(3, 5))
    return (lambda t: _weighted(ops.scale(t, c), w)), [x], None


def _case_add_n(rng):
    xs = [rng.normal(size=(2, 3)) for _ in range(3)]
    w = rng.normal(size=(2, 3))
    return (lambda a, b, c: _weighted(ops.add_n([a, b, c]), w)), xs, None


def _case_sum(rng):
    x = rng.normal(size=(2, 3, 2))
    return (lambda t: ops.scale(ops.sum_all(ops.mul(t, t)), 0.5)), [x], None


def _case_mean(rng):
    x = rng.normal(size=(4, 3))
    return (lambda t: ops.mean_all(ops.mul(t, t))), [x], None


def _case_reshape(rng):
    x = rng.normal(size=(2, 6))
    w = rng.normal(size=(3, 4))
    return (lambda t: _weighted(ops.reshape(t, (3, 4)), w)), [x], None


def _case_transpose(rng):
    x = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(4, 2, 3))
    return (lambda t: _weighted(ops.transpose(t, (2, 0, 1)), w)), [x], None


def _case_index(rng):
    x = rng.normal(size=(5, 4))
    rows = np.array([0, 2, 2, 4])  # repeated row exercises scatter-add
    w = rng.normal(size=(4, 2))
    return (lambda t: _weighted(ops.index(t, (rows, slice(1, 3))), w)), [x], None


def _case_softmax(rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    return (lambda t: _weighted(ops.softmax(t, axis=-1), w)), [x], None


def _case_concat(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
    w = rng.normal(size=(2, 5))
    return (lambda x, y: _weighted(ops.concat([x, y], axis=1), w)), [a, b], None


def _case_split(rng):
    x = rng.normal(size=(2, 5))
    w1, w2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 3))

    def fn(t):
        p, q = ops.split(t, [2, 3], axis=1)
        return ops.add(_weighted(p, w1), _weighted(ops.mul(q, q), w2))

    return fn, [x], None


def _case_linear(rng):
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)
    pw = rng.normal(size=(3, 2))
    return (lambda a, c, d: _weighted(ops.linear(a, c, d), pw)), [x, w, b], None


def _conv_case(stride, pad):
    def build(rng):
        x = rng.normal(size=(2, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
        pw = rng.normal(size=out.shape)
        return (lambda a, c, d: _weighted(ops.conv2d(a, c, d, stride=stride, pad=pad), pw)), [x, w, b], None

    return build


def _case_maxpool(rng):
    x = _distinct(rng, (2, 2, 4, 6))
    w = rng.normal(size=(2, 2, 2, 3))
    return (lambda t: _weighted(ops.maxpool2d(t, 2), w)), [x], None


def _case_upsample(rng):
    x = rng.normal(size=(1, 2, 2, 3))
    w = rng.normal(size=(1, 2, 5, 7))
    return (lambda t: _weighted(ops.upsample_nearest(t, (5, 7)), w)), [x], None


def _case_roi_pool(rng):
    x = _distinct(rng, (2, 2, 6, 7))
    rois = np.array([[0, 0.5, 1.2, 5.5, 4.9], [1, 2.0, 0.0, 7.0, 6.0], [1, 3.3, 2.1, 4.2, 3.0]])
    w = rng.normal(size=(3, 2, 3, 3))
    return (lambda t: _weighted(ops.roi_pool(t, rois, (3, 3)), w)), [x], None


def _case_adaptive(rng):
    x = _distinct(rng, (1, 2, 7, 5))
    w = rng.normal(size=(1, 2, 3, 2))
    return (lambda t: _weighted(ops.adaptive_maxpool2d(t, (3, 2)), w)), [x], None


def _case_smooth_l1(rng):
    gt, pre = rng.normal(size=(4, 2)) * 2, rng.normal(size=(4, 2)) * 2
    kink = [np.abs(np.abs(pre - gt) - 1) < 1e-2] * 2
    return (lambda a, b: L.smooth_l1(a, b)), [gt, pre], kink


def _case_cross_entropy(rng):
    gt = np.eye(4)[rng.integers(0, 4, size=3)]
    x = rng.normal(size=(3, 4))
    return (lambda a, b: L.cross_entropy(a, b, reduction="mean")), [gt, x], None


def _case_bce(rng):
    gt = rng.uniform(0, 1, size=(3, 3))
    p = rng.uniform(0.05, 0.95, size=(3, 3))
    return (lambda a, b: L.bce(a, b, reduction="mean")), [gt, p], None


def _case_bce_logits(rng):
    gt = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
    x = rng.normal(size=(3, 4)) * 3
    w = rng.uniform(0.5, 2.0, size=(3, 4))
    return (lambda a, b: L.bce_with_logits(a, b, reduction="mean", weight=w)), [gt, x], None


def _case_nll(rng):
    labels = rng.integers(0, 3, size=4)
    x = rng.normal(size=(4, 3))
    return (lambda t: L.nll_relation(ops.softmax(t, axis=-1), labels, reduction="mean")), [x], None


def cases() -> list[Case]:
    return [
        _binary("add"),
        _binary("sub"),
        _binary("mul"),
        Case("scale", ops, _case_scale),
        Case("add_n", ops, _case_add_n),
        Case("sum_all", ops, _case_sum),
        Case("mean_all", ops, _case_mean),
        Case("reshape", ops, _case_reshape),
        Case("transpose", ops, _case_transpose),
        Case("index", ops, _case_index),
        _unary("relu", kink=0.0),
        _unary("sigmoid"),
        _unary("exp"),
        _unary("log", lo=0.1, hi=3.0),
        Case("softmax", ops, _case_softmax),
        Case("concat", ops, _case_concat),
        Case("split", ops, _case_split),
        Case("linear", ops, _case_linear),
        Case("conv2d", ops, _conv_case(1, 1)),
        Case("conv2d_stride2", ops, _conv_case(2, 0)),
        Case("maxpool2d", ops, _case_maxpool),
        Case("upsample_nearest", ops, _case_upsample),
        Case("roi_pool", ops, _case_roi_pool),
        Case("adaptive_maxpool2d", ops, _case_adaptive),
        Case("smooth_l1", L, _case_smooth_l1),
        Case("cross_entropy", L, _case_cross_entropy),
        Case("bce", L, _case_bce),
        Case("bce_with_logits", L, _case_bce_logits),
        Case("nll_relation", L, _case_nll),
    ]


def _op_name(case: Case) -> str:
    return case.name.split("_stride")[0]


@contextlib.contextmanager
def corrupt_backward(name: str, factor: float = 1.5) -> Iterator[None]:
    """Temporarily scale every gradient produced by op ``name`` (test hook for the checker itself)."""
    module = ops if hasattr(ops, name) else L
    if not hasattr(module, name):
        raise KeyError(f"no op named {name!r}")
    original = getattr(module, name)

    def wrapped(*args, **kw):
        out = original(*args, **kw)
        if out._backward is None:
            return out
        bw = out._backward
        return make_node(out.data, out._parents, lambda g: tuple(None if x is None else x * factor for x in bw(g)), out.op)

    setattr(module, name, wrapped)
    try:
        yield
    finally:
        setattr(module, name, original)


def run_case(case: Case, seeds: int = 20, tolerance: float = 1e-3, first_seed: int = 0) -> GradCheckReport:
    """Worst result of ``case`` over ``seeds`` consecutive seeds starting at ``first_seed``."""
    worst: Optional[GradCheckReport] = None
    checked = excluded = 0
    failures = []
    for seed in range(first_seed, first_seed + seeds):
        fn, inputs, excl = case.build(np.random.default_rng(seed))
        rep = grad_check(fn, inputs, tolerance=tolerance, name=case.name, exclude=excl)
        checked += rep.checked
        excluded += rep.excluded
        failures += [(seed,) + f for f in rep.failures]
        if worst is None or rep.max_rel_error > worst.max_rel_error:
            worst = rep
    return GradCheckReport(case.name, worst.max_rel_error, tolerance, checked, excluded, failures)


def run_suite(
    seeds: int = 20, tolerance: float = 1e-3, only: Optional[list[str]] = None, first_seed: int = 0
) -> list[GradCheckReport]:
    return [
        run_case(c, seeds, tolerance, first_seed)
        for c in cases()
        if only is None or _op_name(c) in only or c.name in only
    ]
