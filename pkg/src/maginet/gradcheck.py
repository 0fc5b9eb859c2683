"""Central finite-difference checks of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .params import ParamStore
from .tensor import Tensor, backward, no_grad, precision


# step multipliers tried in turn when a stencil straddles a kink
REFINE_STEPS = np.array([1.0, 1e-1, 1e-2, 1e-3, 1e-4])


class NondeterministicError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    rel_tol: float = 1e-2
    # elements whose stencil straddled a kink and were re-measured with a finer step
    refined: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.rel_tol

    def lines(self) -> list:
        out = []
        for name, err in self.max_rel_error.items():
            flag = "ok" if err < self.rel_tol else "FAIL"
            extra = f" (refined {self.refined[name]})" if self.refined.get(name) else ""
            out.append(f"{name:<48} n={self.checked[name]:<5d} max_rel={err:.3e} {flag}{extra}")
        return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a-b| / max(|a|, |b|, floor)`` elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    eps: float = 1e-3,
    rel_tol: float = 1e-2,
    max_elements: Optional[int] = None,
    seed: int = 0,
    dtype=np.float64,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare autodiff gradients of ``f(params)`` with central differences.

    Runs in ``dtype`` (float64 by default) so that rounding noise does not
    swamp the finite-difference quotient. When ``max_elements`` is given,
    at most that many randomly chosen entries per parameter are perturbed.
    Parameter values are restored afterwards.

    If the two one-sided quotients of an element disagree by more than
    ``rel_tol / 10`` the stencil crosses a non-differentiable point (a ReLU, abs or
    clamp kink); that element alone is re-measured with steps down to
    eps/1e4 and the first kink-free estimate is used. Such elements are
    counted in ``report.refined``.
    """
    rng = np.random.default_rng(seed)
    saved = {n: t.data for n, t in params.items()}
    report = GradCheckReport(rel_tol=rel_tol)
    try:
        with precision(dtype):
            for n, t in params.items():
                t.data = saved[n].astype(dtype)
            params.zero_grad()
            loss = f(params)
            with no_grad():
                again = f(params)
            if loss.data.tobytes() != again.data.tobytes():
                raise NondeterministicError("objective differs between two identical evaluations")
            backward(loss)
            for name, t in params.items():
                analytic = np.zeros_like(t.data) if t.grad is None else t.grad
                flat = t.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_elements is not None and flat.size > max_elements:
                    idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
                numeric = np.empty(idx.size)
                f0 = float(again.data)
                refined = 0
                with no_grad():
                    for k, i in enumerate(idx):
                        for step in REFINE_STEPS * eps:
                            central, kinked = _quotients(f, params, flat, i, step, f0, rel_tol, floor)
                            if not kinked:
                                break
                        refined += step != eps
                        numeric[k] = central
                err = relative_error(analytic.reshape(-1)[idx], numeric, floor)
                report.max_rel_error[name] = float(err.max()) if err.size else 0.0
                report.checked[name] = int(idx.size)
                report.refined[name] = refined
    finally:
        for n, t in params.items():
            t.data = saved[n]
            t.grad = None
    return report


def _quotients(f, params, flat, i, step, f0, rel_tol, floor):
    orig = flat[i]
    flat[i] = orig + step
    fp = float(f(params).data)
    flat[i] = orig - step
    fm = float(f(params).data)
    flat[i] = orig
    forward, backward_q = (fp - f0) / step, (f0 - fm) / step
    kinked = float(relative_error(forward, backward_q, max(floor, 1e-4))) > 0.1 * rel_tol
    return (fp - fm) / (2 * step), kinked
