"""Central finite-difference checks against the tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .exceptions import ContractViolation, DomainError
from .tensor import Tape, Tensor

__all__ = ["GradCheckReport", "finite_difference_check"]

# below this magnitude both gradients count as zero and the error is absolute
_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"max {self.max_error:.3e} tol {self.tolerance:.0e} {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _evaluate(fn: Callable[[], Tensor]) -> float:
    out = fn()
    if out.data.size != 1:
        raise DomainError(f"finite-difference check needs a scalar function, got dims {out.dims}")
    return float(out.data.reshape(()))


def finite_difference_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients of ``fn`` with central differences.

    ``fn`` takes no arguments and reads the tensors in ``params``, which are
    perturbed in place and restored.  The relative error of each element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``; the report
    holds the per-parameter maximum.
    """
    base = _evaluate(fn)
    if _evaluate(fn) != base:
        raise ContractViolation("function is not deterministic: two evaluations differ")

    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _evaluate(fn)
            flat[i] = orig - h
            down = _evaluate(fn)
            flat[i] = orig
            numeric[i] = (up - down) / (2 * h)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), _FLOOR)
        report.errors[name] = float(np.max(np.abs(a - numeric) / denom))
        p.zero_grad()
    return report
