"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """d f / d arr by central differences; ``arr`` is perturbed in place and restored."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference scaled by the larger of the two gradients' max magnitudes."""
    scale_ = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if scale_ < 1e-12:
        return float(diff)
    return float(diff / scale_)


@dataclass
class GradCheckResult:
    name: str
    errors: dict[str, float]
    tol: float = DEFAULT_TOL

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def check(
    name: str,
    loss_fn: Callable[[], Tensor],
    wrt: Mapping[str, Tensor],
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOL,
) -> GradCheckResult:
    """Compare reverse-mode gradients of ``loss_fn()`` against finite differences for every tensor in ``wrt``."""
    for t in wrt.values():
        t.grad = None
    backward(loss_fn())
    errors = {}
    for group, t in wrt.items():
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        numeric = numerical_gradient(lambda: loss_fn().item(), t.data, step)
        errors[group] = relative_error(analytic, numeric)
    return GradCheckResult(name, errors, tol)


def weighted_sum(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """A fixed random projection to a scalar; plain sums hide errors in normalising ops."""
    from . import ops

    w = Tensor(rng.standard_normal(out.shape))
    return lambda y: ops.total(ops.mul(y, w))
