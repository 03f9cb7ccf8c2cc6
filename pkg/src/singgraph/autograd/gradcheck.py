"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..errors import DeterminismError, ShapeError
from .tensor import Tensor, compute_precision, no_grad, watch_kinks

SUBSAMPLE_ABOVE = 10_000


@dataclass
class GradCheckResult:
    max_rel_error: float
    tie_warning: bool
    n_checked: int
    worst: Optional[tuple] = None  # (param index, flat coordinate)

    def __float__(self):
        return self.max_rel_error

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(a, n):
    a, n = np.asarray(a, float), np.asarray(n, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)


def _extended_dtype():
    ld = np.longdouble
    return ld if np.finfo(ld).eps < np.finfo(np.float64).eps else np.float64


def _eval(f, dtype=np.float64):
    with no_grad(), compute_precision(dtype):
        out = f()
    val = out.data if isinstance(out, Tensor) else out
    return np.asarray(val, dtype=dtype).reshape(())[()]


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               rng: Optional[np.random.Generator] = None,
               subsample_above: int = SUBSAMPLE_ABOVE, extended: bool = True) -> GradCheckResult:
    """Compare backprop gradients of scalar ``f()`` against central differences.

    Above ``subsample_above`` total coordinates a random 1% subsample is
    checked. Near-ties at max/relu/top-k kinks (closer than 10*eps) set
    ``tie_warning`` instead of being treated as failures by the caller.

    With ``extended`` the perturbed forward passes run in long double where
    the platform has one, so the difference quotient is not swamped by
    float64 rounding on coordinates with very small gradients.
    """
    fd_dtype = _extended_dtype() if extended else np.float64
    params = list(params)
    for p in params:
        p.grad = None
    with watch_kinks(10.0 * eps) as mon:
        loss = f()
    if loss.data.size != 1:
        raise ShapeError(f"grad_check: f must return a scalar, got shape {loss.shape}")
    base = float(loss.data)
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    again = float(_eval(f))
    if again != base:
        raise DeterminismError(f"f() is not deterministic: {base!r} then {again!r}")

    total = sum(p.data.size for p in params)
    coords: List[tuple] = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if total > subsample_above:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(total, size=max(1, total // 100), replace=False)
        coords = [coords[k] for k in np.sort(pick)]

    worst, worst_at = 0.0, None
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        hi = flat[j]
        fp = _eval(f, fd_dtype)
        flat[j] = orig - eps
        lo = flat[j]
        fm = _eval(f, fd_dtype)
        flat[j] = orig
        # divide by the step actually stored in float64, not the nominal 2*eps
        num = float((fp - fm) / (fd_dtype(hi) - fd_dtype(lo)))
        err = float(relative_error(analytic[i].reshape(-1)[j], num))
        if err > worst:
            worst, worst_at = err, (i, j)
    return GradCheckResult(worst, bool(mon.hits), len(coords), worst_at)
