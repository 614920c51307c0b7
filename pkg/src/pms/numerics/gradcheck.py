"""Central finite-difference validation of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonDeterministicError
from .optim import ParamGroup
from .tensor import backward, no_grad


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked_coords: dict[str, int] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def lines(self) -> list[str]:
        out = [f"{name} rel_err={err:.3e} coords={self.checked_coords[name]}" for name, err in self.per_param.items()]
        out.append(f"max_rel_error = {self.max_rel_error:.3e} (tolerance {self.tolerance:.1e})")
        return out


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def gradient_check(
    f,
    group: ParamGroup,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords: int | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar f() against central differences.

    ``f`` must be deterministic (frozen dropout, pinned batch-norm inputs);
    two identical forward passes are required before anything else runs.
    With ``max_coords`` set, a seeded sample of coordinates per parameter is
    probed instead of every element.
    """
    with no_grad():
        v1 = float(f())
        v2 = float(f())
    if v1 != v2:
        raise NonDeterministicError(f"two forward passes disagree: {v1!r} vs {v2!r}")

    group.zero_grad()
    loss = f()
    backward(loss)
    analytic = {name: np.array(g, copy=True) for name, g in group.gradients().items()}

    report = GradCheckReport(tolerance=tolerance, step=step)
    for name, p in group.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            sampler = np.random.default_rng([0x9E3779B9, len(name), n])
            coords = np.sort(sampler.choice(n, size=max_coords, replace=False))
        else:
            coords = np.arange(n)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                f_plus = float(f())
                flat[i] = orig - step
                f_minus = float(f())
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                worst = max(worst, _rel_error(float(a_flat[i]), numeric))
        report.per_param[name] = worst
        report.checked_coords[name] = int(len(coords))
    return report
