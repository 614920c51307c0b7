"""Named parameter groups and the Adam update rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PoisonedUpdateError, ShapeError
from .tensor import Tensor


@dataclass
class AdamConfig:
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


class ParamGroup:
    """Ordered name -> Tensor map with per-parameter Adam state.

    The step counter ``t`` is shared by the whole group and advances once
    per adam_step call.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: int = 0

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not tensor.requires_grad:
            raise ValueError(f"parameter {name!r} does not require gradients")
        self.params[name] = tensor
        self.m[name] = np.zeros_like(tensor.data)
        self.v[name] = np.zeros_like(tensor.data)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Current gradients; parameters untouched by backward count as zero."""
        out = {}
        for name, p in self.params.items():
            out[name] = np.zeros_like(p.data) if p.grad is None else p.grad
        return out


def adam_step(group: ParamGroup, grads: dict[str, np.ndarray], cfg: AdamConfig) -> None:
    """One bias-corrected Adam update, applied in place to the group.

    Any non-finite gradient poisons the whole update: the error is raised
    before a single parameter is modified.
    """
    updates = {}
    for name, p in group.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name!r} {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise PoisonedUpdateError(f"non-finite gradient for parameter {name!r}; parameters left untouched")
        updates[name] = g

    group.t += 1
    t = group.t
    b1, b2 = cfg.beta1, cfg.beta2
    for name, g in updates.items():
        p = group.params[name]
        m = group.m[name] = b1 * group.m[name] + (1.0 - b1) * g
        v = group.v[name] = b2 * group.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data = p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
