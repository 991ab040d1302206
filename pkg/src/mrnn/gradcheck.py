"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from mrnn.autodiff import Array, backward, grad_of, zero_grads


class CheckError(RuntimeError):
    """The function under check misbehaved (non-deterministic forward)."""


@dataclass
class GradReport:
    """Per-parameter agreement between analytic and numeric gradients."""

    step: float
    max_abs_err: Dict[str, float] = field(default_factory=dict)
    max_rel_err: Dict[str, float] = field(default_factory=dict)

    @property
    def worst_abs(self) -> float:
        return max(self.max_abs_err.values(), default=0.0)

    @property
    def worst_rel(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    def passed(self, rel_tol: float) -> bool:
        return self.worst_rel <= rel_tol

    def summary(self) -> str:
        lines = [f"gradient check (central differences, step={self.step:g})"]
        for name in self.max_abs_err:
            lines.append(
                f"  {name:30s} abs={self.max_abs_err[name]:.3e} rel={self.max_rel_err[name]:.3e}"
            )
        lines.append(f"  worst relative error: {self.worst_rel:.3e}")
        return "\n".join(lines)


def _rel_err(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric), 1e-6)
    return abs(analytic - numeric) / denom


def finite_diff_check(
    forward: Callable[[], Array],
    params: Dict[str, Array],
    step: float = 1e-5,
) -> GradReport:
    """Compare analytic gradients of a scalar function against central differences.

    ``forward`` must be deterministic and must rebuild its graph on every
    call, reading the current contents of ``params`` (any frozen state,
    e.g. eval-mode normalization statistics, must stay fixed across the
    perturbed evaluations). Perturbs one coordinate at a time with
    (f(t + e) - f(t - e)) / 2e.
    """
    base = forward()
    if base.data.ndim != 0:
        raise CheckError("finite_diff_check: forward must return a scalar")
    repeat = forward()
    if repeat.data != base.data:
        raise CheckError("finite_diff_check: forward is not deterministic")

    zero_grads(params.values())
    loss = forward()
    backward(loss)
    analytic = {name: grad_of(p).copy() for name, p in params.items()}

    report = GradReport(step=step)
    for name, p in params.items():
        worst_abs = 0.0
        worst_rel = 0.0
        ga = analytic[name]
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + step
            f_plus = float(forward().data)
            p.data[idx] = orig - step
            f_minus = float(forward().data)
            p.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            worst_abs = max(worst_abs, abs(ga[idx] - numeric))
            worst_rel = max(worst_rel, _rel_err(ga[idx], numeric))
        report.max_abs_err[name] = worst_abs
        report.max_rel_err[name] = worst_rel
    return report
