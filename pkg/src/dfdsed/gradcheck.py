"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_input: list[float] = field(default_factory=list)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"grad_check {status}: max relative error {self.max_rel_err:.3e}"


def numeric_grad(f: Callable[[], Tensor], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to every element of ``t``."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f().item()
        flat[i] = orig - step
        down = f().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor],
               step: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare backward() gradients of scalar ``f(*inputs)`` against central differences.

    Only inputs with ``requires_grad`` are checked. Never raises on mismatch;
    inspect ``report.passed``.
    """
    for t in inputs:
        t.grad = None
    loss = f(*inputs)
    loss.backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    errs = []
    for t, a in zip(inputs, analytic):
        if not t.requires_grad:
            continue
        if a is None:
            a = np.zeros_like(t.data)
        num = numeric_grad(lambda: f(*inputs), t, step)
        errs.append(float(relative_error(a, num).max()) if a.size else 0.0)
    worst = max(errs) if errs else 0.0
    return GradCheckReport(max_rel_err=worst, passed=worst <= tol, per_input=errs)
