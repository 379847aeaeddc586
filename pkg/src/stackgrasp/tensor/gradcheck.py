"""Central-difference verification of analytic gradients in float64."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Tensor, backward, precision

# gradients smaller than this on both sides are compared absolutely
TINY = 1e-7


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    checked: int
    excluded: int = 0
    failures: list[tuple[int, int, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: max rel err {self.max_rel_error:.3e} "
            f"(tol {self.tolerance:g}, {self.checked} checked, {self.excluded} excluded)"
        )


def rel_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), TINY)
    return np.abs(a - n) / den


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-3,
    h: float = 1e-3,
    name: str = "graph",
    exclude: Optional[Sequence[Optional[np.ndarray]]] = None,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    skip_kinks: bool = False,
) -> GradCheckReport:
    """Compare backprop gradients of ``fn(*inputs)`` against central differences.

    ``fn`` receives float64 tensors and must return a scalar tensor. ``exclude``
    optionally marks entries (boolean mask per input) sitting on a kink; those
    are counted and skipped. ``max_entries`` samples a random subset per input.

    With ``skip_kinks`` an entry whose forward and backward one-sided slopes
    disagree by more than ``tolerance`` is treated as sitting on a kink (a relu
    or max switching inside the step) and excluded as well.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    with precision(np.float64):
        ts = [Tensor(a, requires_grad=True) for a in arrays]
        loss = fn(*ts)
        backward(loss)
        analytic = [t.grad.copy() for t in ts]

        def f(vals):
            with precision(np.float64):
                return float(fn(*[Tensor(v) for v in vals]).data)

        f0 = f(arrays) if skip_kinks else None
        worst = 0.0
        checked = excluded = 0
        failures = []
        for k, a in enumerate(arrays):
            idxs = np.arange(a.size)
            if max_entries is not None and a.size > max_entries:
                idxs = (rng or np.random.default_rng(0)).choice(a.size, max_entries, replace=False)
            mask = None if exclude is None or exclude[k] is None else np.asarray(exclude[k]).reshape(-1)
            for flat in idxs:
                if mask is not None and mask[flat]:
                    excluded += 1
                    continue
                plus = [x.copy() for x in arrays]
                minus = [x.copy() for x in arrays]
                plus[k].reshape(-1)[flat] += h
                minus[k].reshape(-1)[flat] -= h
                fp, fm = f(plus), f(minus)
                num = (fp - fm) / (2 * h)
                if skip_kinks:
                    right, left = (fp - f0) / h, (f0 - fm) / h
                    if float(rel_error(np.array(right), np.array(left))) >= tolerance:
                        excluded += 1
                        continue
                ana = analytic[k].reshape(-1)[flat]
                err = float(rel_error(np.array(ana), np.array(num)))
                checked += 1
                if err >= tolerance:
                    failures.append((k, int(flat), float(ana), float(num)))
                worst = max(worst, err)
    return GradCheckReport(name, worst, tolerance, checked, excluded, failures)
