"""Multi-scale segmentation, velocity/acceleration differencing, and fusion.

Every function takes either a numpy array or an autodiff Tensor whose leading
axis is the frame axis; slicing, subtraction, and weighted sums behave the
same for both, so the prediction path stays differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientHistoryError, ShapeError, WeightError

SEGMENTS_PER_SCALE = 5
SUM_TOLERANCE = 1e-9

DEFAULT_ALPHA = (0.1, 0.2, 0.3, 0.4)
DEFAULT_BETA = (0.2, 0.3, 0.5)


@dataclass(frozen=True)
class ScaleConfig:
    """Sampling intervals and segmentation anchor.

    ``anchor='end'`` reads the newest 5*delta frames of the window;
    ``anchor='start'`` reads the oldest, which leaves the tail of a long
    window unused and is kept for comparison only.
    """

    deltas: tuple[int, ...] = (10, 5, 2)
    anchor: str = "end"

    def __post_init__(self):
        if not self.deltas:
            raise ConfigError("at least one sampling interval is required")
        if any(d < 1 for d in self.deltas):
            raise ConfigError(f"sampling intervals must be positive, got {self.deltas}")
        if len(set(self.deltas)) != len(self.deltas):
            raise ConfigError(f"duplicate sampling interval in {self.deltas}")
        if self.anchor not in ("end", "start"):
            raise ConfigError(f"anchor must be 'end' or 'start', got {self.anchor!r}")

    def min_history(self) -> int:
        return SEGMENTS_PER_SCALE * max(self.deltas)


def _check_simplex(weights, expect: int, label: str) -> tuple[float, ...]:
    w = tuple(float(x) for x in weights)
    if len(w) != expect:
        raise WeightError(f"{label} needs {expect} coefficients, got {len(w)}")
    if any(x < 0 for x in w):
        raise WeightError(f"{label} coefficients must be non-negative, got {w}")
    if abs(sum(w) - 1.0) > SUM_TOLERANCE:
        raise WeightError(f"{label} coefficients must sum to 1, got sum {sum(w)!r}")
    return w


@dataclass(frozen=True)
class FusionWeights:
    """Per-scale convex weights over the 4 velocity and 3 acceleration diffs."""

    alpha: dict[int, tuple[float, float, float, float]] = field(default_factory=dict)
    beta: dict[int, tuple[float, float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for delta, w in self.alpha.items():
            self.alpha[delta] = _check_simplex(w, 4, f"alpha[{delta}]")
        for delta, w in self.beta.items():
            self.beta[delta] = _check_simplex(w, 3, f"beta[{delta}]")

    @staticmethod
    def defaults(deltas) -> "FusionWeights":
        return FusionWeights(
            alpha={d: DEFAULT_ALPHA for d in deltas},
            beta={d: DEFAULT_BETA for d in deltas},
        )


def segment(window, delta: int, anchor: str = "end") -> list:
    """Split 5*delta frames into 5 contiguous blocks, oldest first."""
    if delta < 1:
        raise ConfigError(f"sampling interval must be positive, got {delta}")
    k = window.shape[0]
    need = SEGMENTS_PER_SCALE * delta
    if k < need:
        raise InsufficientHistoryError(f"window of {k} frames is shorter than 5*{delta} = {need}")
    base = k - need if anchor == "end" else 0
    return [window[base + i * delta : base + (i + 1) * delta] for i in range(SEGMENTS_PER_SCALE)]


def velocity_diffs(segments: list) -> list:
    """Adjacent segment differences: [S2-S1, S3-S2, S4-S3, S5-S4]."""
    if len(segments) != SEGMENTS_PER_SCALE:
        raise ShapeError(f"expected {SEGMENTS_PER_SCALE} segments, got {len(segments)}")
    shapes = {tuple(s.shape) for s in segments}
    if len(shapes) != 1:
        raise ShapeError(f"segments disagree in shape: {sorted(shapes)}")
    return [segments[i + 1] - segments[i] for i in range(SEGMENTS_PER_SCALE - 1)]


def accel_diffs(diffs: list) -> list:
    """Second differences of the segment track (3 from 4)."""
    if len(diffs) != 4:
        raise ShapeError(f"expected 4 velocity differences, got {len(diffs)}")
    return [diffs[i + 1] - diffs[i] for i in range(3)]


def fuse_velocity(diffs: list, alpha) -> object:
    """Convex blend of the 4 velocity differences."""
    w = _check_simplex(alpha, 4, "alpha")
    out = diffs[0] * w[0]
    for d, x in zip(diffs[1:], w[1:]):
        out = out + d * x
    return out


def fuse_accel(diffs: list, beta) -> object:
    """Convex blend of the 3 acceleration differences."""
    w = _check_simplex(beta, 3, "beta")
    out = diffs[0] * w[0]
    for d, x in zip(diffs[1:], w[1:]):
        out = out + d * x
    return out


def newest_diff(diffs: list) -> object:
    """The raw most-recent velocity difference (fusion bypass)."""
    if not diffs:
        raise ShapeError("no differences to select from")
    return diffs[-1]


def combine_weights_for(deltas, spec: str | None) -> dict[int, float]:
    """Branch combination weights: 'equal' (default) or an explicit list."""
    deltas = tuple(deltas)
    if spec is None or spec in ("", "equal"):
        w = [1.0 / len(deltas)] * len(deltas)
    else:
        try:
            w = [float(x) for x in str(spec).split(",") if x.strip() != ""]
        except ValueError:
            raise ConfigError(f"bad combination weights {spec!r}") from None
        if len(w) != len(deltas):
            raise WeightError(f"{len(deltas)} scales need {len(deltas)} combination weights, got {len(w)}")
    if any(x < 0 for x in w):
        raise WeightError(f"combination weights must be non-negative, got {w}")
    if abs(sum(w) - 1.0) > SUM_TOLERANCE:
        raise WeightError(f"combination weights must sum to 1, got sum {sum(w)!r}")
    return dict(zip(deltas, w))
