"""Central-difference gradient checking for parameterized computations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import ConfigError, GradientTape, Tensor


@dataclass
class ParamCheck:
    max_rel_err: float
    checked: int
    worst_index: tuple[int, ...] | None = None
    analytic: float = 0.0
    numeric: float = 0.0


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    seed: int
    passed: bool = True
    per_param: dict[str, ParamCheck] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        if not self.per_param:
            return 0.0
        return max(c.max_rel_err for c in self.per_param.values())

    def summary_lines(self) -> list[str]:
        lines = []
        for name, check in sorted(self.per_param.items()):
            status = "ok" if check.max_rel_err <= self.tolerance else "FAIL"
            lines.append(f"{status:4s} {name:40s} rel-err {check.max_rel_err:.3e} "
                         f"({check.checked} elements)")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max rel-err {self.max_rel_err:.3e} vs tolerance "
                     f"{self.tolerance:.1e}")
        return lines


def relative_error(a: float, n: float, eps: float = 1e-12) -> float:
    return abs(a - n) / max(abs(a), abs(n), eps)


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor], *,
               step: float = 1e-5, tolerance: float = 1e-4,
               max_elements_per_param: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of a scalar computation against central differences.

    ``f`` must rebuild the computation from the given parameter tensors on each
    call (their .data is perturbed in place for the numeric passes). Requires
    float64 parameters. Large parameters may be subsampled; the sampling seed
    is recorded in the report.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ConfigError(f"grad_check requires float64 parameters; {name} is {p.dtype.name}")
        if not p.requires_grad:
            raise ConfigError(f"parameter {name} does not require gradients")

    with GradientTape() as tape:
        loss = f()
        analytic = tape.gradients(loss, params)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance, step=step, seed=seed)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements_per_param is not None and flat.size > max_elements_per_param:
            indices = np.sort(rng.choice(flat.size, size=max_elements_per_param, replace=False))
        check = ParamCheck(max_rel_err=0.0, checked=len(indices))
        a_flat = analytic[name].data.reshape(-1)
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + step
            plus = f().item()
            flat[idx] = original - step
            minus = f().item()
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * step)
            err = relative_error(float(a_flat[idx]), numeric)
            if err > check.max_rel_err:
                check.max_rel_err = err
                check.worst_index = np.unravel_index(int(idx), p.shape)
                check.analytic = float(a_flat[idx])
                check.numeric = numeric
        report.per_param[name] = check
        if check.max_rel_err > tolerance:
            report.passed = False
    return report
