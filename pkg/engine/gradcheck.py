"""
Gradient Check — autodiff vs. central finite differences.

``grad_check`` evaluates a loss closure, backpropagates once, then perturbs
parameter entries by ±h and compares. Large parameters can be sampled with
``max_entries`` so the check stays cheap on full-size models.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from config import settings
from engine.tensor_core import backward
from utils.errors import ContractError

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)   # name -> max relative error
    tolerance: float = settings.GRADCHECK_TOLERANCE
    checked_entries: int = 0

    @property
    def worst(self):
        if not self.errors:
            return None, 0.0
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    @property
    def passed(self):
        return all(err < self.tolerance for err in self.errors.values())

    def failures(self):
        return {n: e for n, e in self.errors.items() if e >= self.tolerance}


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(closure, params, tolerance=settings.GRADCHECK_TOLERANCE, h=settings.GRADCHECK_STEP,
               max_entries=None, seed=0):
    """
    closure: () -> scalar Tensor, must be deterministic (dropout off)
    params:  dict name -> leaf Tensor read by the closure
    """
    first = closure().item()
    second = closure().item()
    if first != second:
        raise ContractError(
            f"grad_check closure is not deterministic ({first!r} != {second!r}); disable dropout"
        )

    for p in params.values():
        p.zero_grad()
    backward(closure())
    analytic = {name: p.grad.copy() for name, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            positions = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for pos in positions:
            original = flat[pos]
            flat[pos] = original + h
            plus = closure().item()
            flat[pos] = original - h
            minus = closure().item()
            flat[pos] = original
            numeric = (plus - minus) / (2.0 * h)
            worst = max(worst, relative_error(analytic[name].reshape(-1)[pos], numeric))
        report.errors[name] = worst
        report.checked_entries += len(positions)
        logger.debug("grad_check %s: max rel err %.3e over %d entries", name, worst, len(positions))

    name, err = report.worst
    logger.info("grad_check: %d entries, worst %s (%.3e), %s",
                report.checked_entries, name, err, "PASS" if report.passed else "FAIL")
    return report
