"""Motion sequences: text serialization, normalization, windows, synthesis.

The on-disk format (MTF) is a UTF-8, LF-terminated text file:

    MTF1 joints=<J> fps=<fps> name=<label>
    x1 y1 z1 x2 y2 z2 ...        one line per frame, 3*J floats

Floats are written with Python's shortest round-trip representation, so
parse(write(seq)) reproduces the array bit-exactly.  Labels must be free of
whitespace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, DegenerateRangeError, ParseError

AXES = ("x", "y", "z")


@dataclass
class MotionSequence:
    """A named pose track: frames (F, J, 3) in millimeters or normalized units."""

    name: str
    fps: float
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise DataError(f"frames must have shape (F, J, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise DataError(f"sequence needs at least one frame and one joint, got {self.frames.shape}")
        if self.fps <= 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        if not self.name or any(c.isspace() for c in self.name):
            raise DataError(f"sequence name must be a non-empty whitespace-free token, got {self.name!r}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError(f"sequence {self.name!r} contains non-finite values")

    @property
    def joints(self) -> int:
        return self.frames.shape[1]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class NormStats:
    """Per-axis extrema of one action, the basis of its [-1, 1] mapping."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def mins(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.z_min])

    def maxs(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max, self.z_max])

    def mid(self) -> np.ndarray:
        return (self.maxs() + self.mins()) / 2.0

    def half_range(self) -> np.ndarray:
        return (self.maxs() - self.mins()) / 2.0


@dataclass
class UnitWindow:
    """One training/evaluation unit: K observed poses, L targets, extra truth."""

    observed: np.ndarray  # (K, J, 3)
    target: np.ndarray  # (L, J, 3)
    extended_future: np.ndarray  # (E, J, 3), 0 <= E <= extended cap
    action: str
    start: int


@dataclass
class SynthSpec:
    """Seeded sum-of-sinusoids motion, optionally with a trend break."""

    joints: int = 8
    frames: int = 200
    fps: float = 25.0
    sinusoids: int = 3
    freq_min: float = 0.2
    freq_max: float = 1.0
    amplitude: float = 1.0
    noise_std: float = 0.01
    trend_break: int | None = None
    seed: int = 0
    name: str = "synth"

    def __post_init__(self):
        if self.joints < 1 or self.frames < 1 or self.sinusoids < 1:
            raise DataError("joints, frames, and sinusoids must all be at least 1")
        if not 0.0 < self.freq_min <= self.freq_max:
            raise DataError(f"bad frequency range [{self.freq_min}, {self.freq_max}]")
        if self.freq_max >= self.fps / 2.0:
            raise DataError(f"max frequency {self.freq_max} must stay below the Nyquist rate {self.fps / 2.0}")
        if self.amplitude <= 0 or self.noise_std < 0:
            raise DataError("amplitude must be positive and noise_std non-negative")
        if self.trend_break is not None and not 0 < self.trend_break < self.frames:
            raise DataError(f"trend break {self.trend_break} outside (0, {self.frames})")


def _format_float(v: float) -> str:
    return repr(float(v))


def write_mtf(seq: MotionSequence) -> str:
    fps = seq.fps
    fps_text = str(int(fps)) if float(fps).is_integer() else _format_float(fps)
    lines = [f"MTF1 joints={seq.joints} fps={fps_text} name={seq.name}"]
    flat = seq.frames.reshape(seq.n_frames, -1)
    for row in flat:
        lines.append(" ".join(_format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_mtf(text: str) -> MotionSequence:
    """Strict parser; every complaint carries a 1-based line number."""
    lines = text.split("\n")
    if not lines or not lines[0].strip():
        raise ParseError("missing header", line=1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "MTF1":
        raise ParseError(f"header must be 'MTF1 joints=<J> fps=<fps> name=<label>', got {lines[0]!r}", line=1)
    fields = {}
    for i, key in enumerate(("joints", "fps", "name"), start=1):
        prefix = key + "="
        if not head[i].startswith(prefix):
            raise ParseError(f"expected {prefix}<value> at header position {i + 1}, got {head[i]!r}", line=1)
        fields[key] = head[i][len(prefix) :]
    try:
        joints = int(fields["joints"])
        fps = float(fields["fps"])
    except ValueError as exc:
        raise ParseError(f"bad header number: {exc}", line=1) from None
    if joints < 1:
        raise ParseError(f"joints must be at least 1, got {joints}", line=1)

    rows = []
    width = 3 * joints
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        tokens = raw.split()
        if len(tokens) != width:
            raise ParseError(f"expected {width} values, got {len(tokens)}", line=lineno)
        try:
            row = [float(tok) for tok in tokens]
        except ValueError:
            bad = next(tok for tok in tokens if not _is_float(tok))
            raise ParseError(f"bad float {bad!r}", line=lineno) from None
        if not all(math.isfinite(v) for v in row):
            raise ParseError("non-finite value", line=lineno)
        rows.append(row)
    if not rows:
        raise ParseError("file contains no frames", line=len(lines))
    frames = np.array(rows, dtype=np.float64).reshape(len(rows), joints, 3)
    return MotionSequence(name=fields["name"], fps=fps, frames=frames)


def _is_float(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def compute_norm_stats(seq: MotionSequence) -> NormStats:
    """Per-axis extrema over every frame and joint of the action."""
    mins = seq.frames.min(axis=(0, 1))
    maxs = seq.frames.max(axis=(0, 1))
    for axis, lo, hi in zip(AXES, mins, maxs):
        if lo == hi:
            raise DegenerateRangeError(f"axis {axis} of action {seq.name!r} has zero range ({lo})")
    return NormStats(mins[0], maxs[0], mins[1], maxs[1], mins[2], maxs[2])


def normalize_action(seq: MotionSequence) -> tuple[MotionSequence, NormStats]:
    """Center by the per-axis midpoint and scale by the half range to [-1, 1]."""
    stats = compute_norm_stats(seq)
    # 2 (x - min) / (max - min) - 1 rather than (x - mid) / half_range: the
    # shared rounding of numerator and denominator lands the extrema on
    # exactly -1.0 and +1.0, which the midpoint form misses by one ulp.
    span = stats.maxs() - stats.mins()
    out = 2.0 * (seq.frames - stats.mins()) / span - 1.0
    return replace(seq, frames=out), stats


def denormalize(frames: np.ndarray, stats: NormStats) -> np.ndarray:
    """Inverse of normalize_action on a raw (.., 3) coordinate array."""
    return np.asarray(frames, dtype=np.float64) * stats.half_range() + stats.mid()


def make_windows(
    seq: MotionSequence,
    k: int = 50,
    l: int = 10,
    extended: int = 30,
    stride: int = 10,
) -> list[UnitWindow]:
    """Slide a (K observed, L target) window over the sequence.

    A window is emitted for every start with start + K + L <= F; up to
    ``extended`` additional ground-truth frames are attached for rollout
    supervision when the sequence is long enough.
    """
    if k < 1 or l < 1 or stride < 1 or extended < 0:
        raise DataError(f"bad window parameters k={k} l={l} stride={stride} extended={extended}")
    out = []
    frames = seq.frames
    total = seq.n_frames
    for start in range(0, total - k - l + 1, stride):
        mid = start + k
        end = mid + l
        ext_end = min(end + extended, total)
        out.append(
            UnitWindow(
                observed=frames[start:mid],
                target=frames[mid:end],
                extended_future=frames[end:ext_end],
                action=seq.name,
                start=start,
            )
        )
    return out


def synth_generate(spec: SynthSpec) -> MotionSequence:
    """Per joint and axis, a seeded sum of sinusoids plus Gaussian noise.

    With a trend break set, frequencies and phases are redrawn from the break
    frame on (amplitudes are kept), giving the motion an abrupt regime change.
    """
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.frames) / spec.fps
    frames = np.zeros((spec.frames, spec.joints, 3))
    for j in range(spec.joints):
        for a in range(3):
            amps = rng.uniform(0.0, spec.amplitude, size=spec.sinusoids)
            freqs = rng.uniform(spec.freq_min, spec.freq_max, size=spec.sinusoids)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.sinusoids)
            track = np.sum(amps[:, None] * np.sin(2.0 * np.pi * freqs[:, None] * t + phases[:, None]), axis=0)
            if spec.trend_break is not None:
                freqs2 = rng.uniform(spec.freq_min, spec.freq_max, size=spec.sinusoids)
                phases2 = rng.uniform(0.0, 2.0 * np.pi, size=spec.sinusoids)
                tail = np.sum(
                    amps[:, None] * np.sin(2.0 * np.pi * freqs2[:, None] * t + phases2[:, None]),
                    axis=0,
                )
                track = np.where(np.arange(spec.frames) >= spec.trend_break, tail, track)
            frames[:, j, a] = track
    if spec.noise_std > 0:
        frames += rng.normal(0.0, spec.noise_std, size=frames.shape)
    return MotionSequence(name=spec.name, fps=spec.fps, frames=frames)
