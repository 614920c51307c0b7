"""The parallel multi-scale incremental prediction model.

One velocity branch (and, unless disabled, one acceleration branch) per
sampling interval turns fused frame differences into a learned increment;
the increment, damped per future frame by an attenuation coefficient, is
applied on top of the most recent observed segment.  Branch outputs are
blended with fixed convex weights, and the whole per-branch recomputation
can be repeated with the blended draft appended to the working window
(iterative adjustment).  Longer horizons chain the short predictor
autoregressively on a sliding window.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from io import BytesIO

import numpy as np

from .dataio import NormStats
from .errors import (
    ConfigError,
    InsufficientHistoryError,
    LoadError,
    ShapeError,
    StatisticsError,
)
from .increments import (
    FusionWeights,
    ScaleConfig,
    accel_diffs,
    fuse_accel,
    fuse_velocity,
    newest_diff,
    segment,
    velocity_diffs,
)
from .numerics.layers import (
    BatchNormParams,
    LstmLayerParams,
    batchnorm_init,
    bn_dropout_act,
    forward_linear,
    lstm_forward,
)
from .numerics.rng import RngState, uniform_init
from .numerics.tensor import Tensor, as_tensor, concat, no_grad

MAGIC = b"PMSM"
CONTAINER_VERSION = 1
LSTM_LAYERS = 3


def gamma_schedule(rho: float, n: int) -> np.ndarray:
    """Attenuation for future frame n (1-based): rho ** (n - 1)."""
    if not 0.0 < rho <= 1.0:
        raise ConfigError(f"attenuation base must lie in (0, 1], got {rho}")
    return rho ** np.arange(n, dtype=np.float64)


def _gamma_len(l: int, delta: int) -> int:
    # Enough entries to cover every sub-step of the horizon at this interval.
    return math.ceil(l / delta) * delta


@dataclass
class ModelConfig:
    """Everything needed to rebuild a model skeleton, minus the weights."""

    joints: int
    k: int = 50
    l: int = 10
    hidden: int = 256
    scales: tuple[int, ...] = (10, 5, 2)
    anchor: str = "end"
    alpha: dict[int, tuple] = field(default_factory=dict)
    beta: dict[int, tuple] = field(default_factory=dict)
    gamma: dict[int, np.ndarray] = field(default_factory=dict)
    combine: dict[int, float] = field(default_factory=dict)
    adjust_rounds: int = 1
    increment_sign: float = -1.0
    drop_rate: float = 0.4
    activation: str = "relu"
    fc_bias: bool = True
    bn_relu: bool = True
    accel_correction: bool = True
    velocity_fusion: bool = True
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0
    label: str = "pms"

    def __post_init__(self):
        self.scales = tuple(int(d) for d in self.scales)
        scale_cfg = ScaleConfig(self.scales, self.anchor)
        if self.joints < 1:
            raise ConfigError(f"joints must be at least 1, got {self.joints}")
        if self.l < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.l}")
        if self.hidden < 1:
            raise ConfigError(f"hidden size must be at least 1, got {self.hidden}")
        if scale_cfg.min_history() > self.k:
            raise ConfigError(
                f"window of {self.k} frames cannot hold 5*{max(self.scales)} = {scale_cfg.min_history()} frames"
            )
        if self.adjust_rounds < 1:
            raise ConfigError(f"adjustment rounds must be at least 1, got {self.adjust_rounds}")
        if self.increment_sign not in (-1.0, 1.0):
            raise ConfigError(f"increment sign must be -1 or +1, got {self.increment_sign}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError(f"drop rate must lie in [0, 1), got {self.drop_rate}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"activation must be 'relu' or 'tanh', got {self.activation!r}")
        if not self.alpha:
            self.alpha = {d: (0.1, 0.2, 0.3, 0.4) for d in self.scales}
        if not self.beta:
            self.beta = {d: (0.2, 0.3, 0.5) for d in self.scales}
        FusionWeights(alpha=dict(self.alpha), beta=dict(self.beta))
        for d in self.scales:
            if d not in self.alpha or d not in self.beta:
                raise ConfigError(f"missing fusion weights for interval {d}")
        if not self.combine:
            self.combine = {d: 1.0 / len(self.scales) for d in self.scales}
        if set(self.combine) != set(self.scales):
            raise ConfigError(f"combination weights cover {sorted(self.combine)}, scales are {self.scales}")
        total = sum(self.combine.values())
        if any(w < 0 for w in self.combine.values()) or abs(total - 1.0) > 1e-9:
            raise ConfigError(f"combination weights must be a convex blend, got {self.combine}")
        if not self.gamma:
            self.gamma = {d: gamma_schedule(0.8, _gamma_len(self.l, d)) for d in self.scales}
        for d in self.scales:
            g = np.asarray(self.gamma.get(d), dtype=np.float64)
            need = _gamma_len(self.l, d)
            if g.ndim != 1 or g.shape[0] < need:
                raise ConfigError(f"gamma for interval {d} needs {need} entries, got {g.shape}")
            if not np.all(np.isfinite(g)) or np.any(g < 0):
                raise ConfigError(f"gamma for interval {d} must be finite and non-negative")
            self.gamma[d] = g

    @property
    def features(self) -> int:
        return self.joints * 3


class BranchParams:
    """Weights of one incremental-learning branch: FC, 3-layer LSTM, FC+BN, FC, FC."""

    def __init__(
        self,
        fc_in_w: Tensor,
        fc_in_b: Tensor | None,
        lstm: list[LstmLayerParams],
        fc_mid_w: Tensor,
        fc_mid_b: Tensor | None,
        bn: BatchNormParams | None,
        fc_out_a_w: Tensor,
        fc_out_a_b: Tensor | None,
        fc_out_b_w: Tensor,
        fc_out_b_b: Tensor | None,
    ):
        self.fc_in_w = fc_in_w
        self.fc_in_b = fc_in_b
        self.lstm = lstm
        self.fc_mid_w = fc_mid_w
        self.fc_mid_b = fc_mid_b
        self.bn = bn
        self.fc_out_a_w = fc_out_a_w
        self.fc_out_a_b = fc_out_a_b
        self.fc_out_b_w = fc_out_b_w
        self.fc_out_b_b = fc_out_b_b

    @staticmethod
    def build(cfg: ModelConfig, rng: RngState, prefix: str, init: bool = True) -> "BranchParams":
        f, h = cfg.features, cfg.hidden

        def weight(name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
            if init:
                return Tensor(uniform_init(shape, fan_in, rng.generator(f"init:{prefix}.{name}")), requires_grad=True)
            return Tensor(np.zeros(shape), requires_grad=True)

        def bias(name: str, size: int, fan_in: int) -> Tensor | None:
            if not cfg.fc_bias:
                return None
            return weight(name, (size,), fan_in)

        lstm = []
        for i in range(LSTM_LAYERS):
            nin = h
            lstm.append(
                LstmLayerParams(
                    wx=weight(f"lstm.{i}.wx", (nin, 4 * h), nin),
                    wh=weight(f"lstm.{i}.wh", (h, 4 * h), h),
                    b=weight(f"lstm.{i}.b", (4 * h,), h),
                )
            )
        return BranchParams(
            fc_in_w=weight("fc_in.w", (f, h), f),
            fc_in_b=bias("fc_in.b", h, f),
            lstm=lstm,
            fc_mid_w=weight("fc_mid.w", (h, h), h),
            fc_mid_b=bias("fc_mid.b", h, h),
            bn=batchnorm_init(h, cfg.bn_eps, cfg.bn_momentum) if cfg.bn_relu else None,
            fc_out_a_w=weight("fc_out_a.w", (h, h), h),
            fc_out_a_b=bias("fc_out_a.b", h, h),
            fc_out_b_w=weight("fc_out_b.w", (h, f), h),
            fc_out_b_b=bias("fc_out_b.b", f, h),
        )

    def tensor_slots(self, prefix: str) -> list[tuple[str, object, str]]:
        """(name, holder, attribute) triples for every stored array."""
        slots = [(f"{prefix}.fc_in.w", self, "fc_in_w")]
        if self.fc_in_b is not None:
            slots.append((f"{prefix}.fc_in.b", self, "fc_in_b"))
        for i, layer in enumerate(self.lstm):
            slots.extend(
                [
                    (f"{prefix}.lstm.{i}.wx", layer, "wx"),
                    (f"{prefix}.lstm.{i}.wh", layer, "wh"),
                    (f"{prefix}.lstm.{i}.b", layer, "b"),
                ]
            )
        slots.append((f"{prefix}.fc_mid.w", self, "fc_mid_w"))
        if self.fc_mid_b is not None:
            slots.append((f"{prefix}.fc_mid.b", self, "fc_mid_b"))
        if self.bn is not None:
            slots.extend(
                [
                    (f"{prefix}.bn.scale", self.bn, "scale"),
                    (f"{prefix}.bn.shift", self.bn, "shift"),
                    (f"{prefix}.bn.running_mean", self.bn, "running_mean"),
                    (f"{prefix}.bn.running_var", self.bn, "running_var"),
                ]
            )
        slots.append((f"{prefix}.fc_out_a.w", self, "fc_out_a_w"))
        if self.fc_out_a_b is not None:
            slots.append((f"{prefix}.fc_out_a.b", self, "fc_out_a_b"))
        slots.append((f"{prefix}.fc_out_b.w", self, "fc_out_b_w"))
        if self.fc_out_b_b is not None:
            slots.append((f"{prefix}.fc_out_b.b", self, "fc_out_b_b"))
        return slots


class PmsModel:
    """Config, per-scale branch weights, and the training normalization."""

    def __init__(self, cfg: ModelConfig, branches: dict[tuple[int, str], BranchParams], norm_stats: NormStats | None = None):
        self.cfg = cfg
        self.branches = branches
        self.norm_stats = norm_stats

    def branch_kinds(self) -> tuple[str, ...]:
        return ("v", "a") if self.cfg.accel_correction else ("v",)

    def tensor_slots(self) -> list[tuple[str, object, str]]:
        slots = []
        for delta in self.cfg.scales:
            for kind in self.branch_kinds():
                slots.extend(self.branches[(delta, kind)].tensor_slots(f"{kind}.{delta}"))
        return slots

    def param_group(self):
        from .numerics.optim import ParamGroup

        group = ParamGroup()
        for name, holder, attr in self.tensor_slots():
            value = getattr(holder, attr)
            if isinstance(value, Tensor):
                group.add(name, value)
        return group


def build_model(cfg: ModelConfig, norm_stats: NormStats | None = None, init: bool = True) -> PmsModel:
    """Seeded construction; init=False leaves zero weights for loaders."""
    rng = RngState(cfg.seed)
    branches = {}
    for delta in cfg.scales:
        branches[(delta, "v")] = BranchParams.build(cfg, rng, f"v.{delta}", init)
        if cfg.accel_correction:
            branches[(delta, "a")] = BranchParams.build(cfg, rng, f"a.{delta}", init)
    return PmsModel(cfg, branches, norm_stats)


@dataclass
class Prediction:
    """Forecast frames plus provenance and per-branch intermediates."""

    frames: np.ndarray  # (horizon, J, 3)
    per_branch: dict[int, np.ndarray]
    model_id: str
    window_id: str


# ---- forward passes --------------------------------------------------------


def branch_forward(x, branch: BranchParams, cfg: ModelConfig, mode: str = "infer", rng=None) -> Tensor:
    """Fused increments (steps, batch, J*3) -> learned increment, same shape.

    Batch norm statistics are taken over the rows of the flattened
    (steps*batch, hidden) activation; train mode insists on a batch of at
    least 2 windows.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"branch input must be (steps, batch, features), got {x.shape}")
    steps, b, f = x.shape
    if f != cfg.features:
        raise ShapeError(f"branch input carries {f} features, model expects {cfg.features}")
    if mode == "train" and branch.bn is not None and b < 2:
        raise StatisticsError(f"training needs a batch of at least 2 windows for batch norm, got {b}")
    h = cfg.hidden

    flat = x.reshape((steps * b, f))
    z = forward_linear(flat, branch.fc_in_w, branch.fc_in_b)
    z = lstm_forward(z.reshape((steps, b, h)), branch.lstm)
    z = forward_linear(z.reshape((steps * b, h)), branch.fc_mid_w, branch.fc_mid_b)
    z = bn_dropout_act(
        z,
        branch.bn,
        mode,
        cfg.drop_rate,
        rng,
        activation=cfg.activation if branch.bn is not None else "identity",
    )
    z = forward_linear(z, branch.fc_out_a_w, branch.fc_out_a_b)
    z = forward_linear(z, branch.fc_out_b_w, branch.fc_out_b_b)
    return z.reshape((steps, b, f))


def correct_velocity(velocity_inc, accel_inc):
    """Elementwise acceleration-to-velocity correction (a plain sum)."""
    if tuple(velocity_inc.shape) != tuple(accel_inc.shape):
        raise ShapeError(f"increment shapes differ: {tuple(velocity_inc.shape)} vs {tuple(accel_inc.shape)}")
    return velocity_inc + accel_inc


def predict_segment(last_segment, increment, gamma, sign: float = -1.0):
    """Next segment: frame n = last_segment[n] + sign * gamma[n] * increment[n]."""
    if tuple(last_segment.shape) != tuple(increment.shape):
        raise ShapeError(f"segment {tuple(last_segment.shape)} vs increment {tuple(increment.shape)}")
    delta = last_segment.shape[0]
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim != 1 or g.shape[0] < delta:
        raise ShapeError(f"gamma needs at least {delta} entries, got shape {g.shape}")
    g = g[:delta].reshape((delta,) + (1,) * (len(last_segment.shape) - 1))
    return last_segment + (increment * g) * float(sign)


def _cat_frames(parts: list):
    if any(isinstance(p, Tensor) for p in parts):
        return concat([as_tensor(p) for p in parts], axis=0)
    return np.concatenate(parts, axis=0)


def _branch_rollout(work, true_anchor, delta: int, model: PmsModel, mode: str, rng) -> Tensor:
    """Predict ceil(L/delta) segments at one interval, reanchoring on each."""
    cfg = model.cfg
    sub_steps = math.ceil(cfg.l / delta)
    anchor = true_anchor
    frames = []
    for s in range(sub_steps):
        segs = segment(work, delta, cfg.anchor)
        vd = velocity_diffs(segs)
        fused_v = fuse_velocity(vd, cfg.alpha[delta]) if cfg.velocity_fusion else newest_diff(vd)
        inc = branch_forward(_fold(fused_v), model.branches[(delta, "v")], cfg, mode, rng)
        if cfg.accel_correction:
            ad = accel_diffs(vd)
            inc_a = branch_forward(_fold(fuse_accel(ad, cfg.beta[delta])), model.branches[(delta, "a")], cfg, mode, rng)
            inc = correct_velocity(inc, inc_a)
        pred = predict_segment(anchor, _unfold(inc), cfg.gamma[delta][s * delta : (s + 1) * delta], cfg.increment_sign)
        frames.append(pred)
        work = _cat_frames([work, pred])
        anchor = pred
    out = _cat_frames(frames)
    return out[: cfg.l]


def _fold(x):  # (d, B, J, 3) -> (d, B, J*3)
    d, b, j, c = x.shape
    return x.reshape((d, b, j * c))


def _unfold(x):  # (d, B, J*3) -> (d, B, J, 3)
    d, b, f = x.shape
    return x.reshape((d, b, f // 3, 3))


def predict_short_batch(windows, model: PmsModel, mode: str = "infer", rng=None):
    """Batched short-horizon forecast.

    windows: (K, B, J, 3), frame-major.  Returns (prediction (L, B, J, 3),
    per-branch dict) from the final adjustment round.  Each round appends the
    previous blended draft to the working window so the per-branch increments
    see it, while predicted segments stay anchored on the true history (every
    round forecasts the same L frames).
    """
    cfg = model.cfg
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "infer":
        with no_grad():
            return _predict_short_batch(windows, model, mode, rng)
    if rng is None:
        rng = RngState(cfg.seed)
    return _predict_short_batch(windows, model, mode, rng)


def _predict_short_batch(windows, model: PmsModel, mode: str, rng):
    cfg = model.cfg
    shape = tuple(windows.shape)
    if len(shape) != 4 or shape[2] != cfg.joints or shape[3] != 3:
        raise ShapeError(f"windows must be (K, B, {cfg.joints}, 3), got {shape}")
    if shape[0] != cfg.k:
        raise InsufficientHistoryError(f"model expects windows of {cfg.k} frames, got {shape[0]}")

    combined = None
    branch_preds: dict[int, Tensor] = {}
    for _ in range(cfg.adjust_rounds):
        work0 = windows if combined is None else _cat_frames([windows, combined])
        for delta in cfg.scales:
            true_anchor = windows[cfg.k - delta : cfg.k]
            branch_preds[delta] = _branch_rollout(work0, true_anchor, delta, model, mode, rng)
        combined = None
        for delta in cfg.scales:
            term = branch_preds[delta] * cfg.combine[delta]
            combined = term if combined is None else combined + term
    return combined, branch_preds


def predict_long_batch(windows, model: PmsModel, horizon: int = 25, mode: str = "infer", rng=None):
    """Chain short forecasts: drop the oldest L frames, append the prediction."""
    cfg = model.cfg
    if horizon < 1:
        raise ConfigError(f"horizon must be at least 1, got {horizon}")
    if mode == "infer":
        with no_grad():
            return _predict_long_batch(windows, model, horizon, mode, rng)
    if rng is None:
        rng = RngState(cfg.seed)
    return _predict_long_batch(windows, model, horizon, mode, rng)


def _predict_long_batch(windows, model: PmsModel, horizon: int, mode: str, rng):
    cfg = model.cfg
    chunks = []
    produced = 0
    cur = windows
    while produced < horizon:
        pred, _ = _predict_short_batch(cur, model, mode, rng)
        chunks.append(pred)
        produced += cfg.l
        if produced < horizon:
            cur = _cat_frames([cur[cfg.l :], pred])
    out = _cat_frames(chunks) if len(chunks) > 1 else chunks[0]
    return out[:horizon]


def _as_numpy(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def predict_short(window: np.ndarray, model: PmsModel, mode: str = "infer", rng=None, window_id: str = "window") -> Prediction:
    """Single-window convenience wrapper around the batched short forecast."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 3:
        raise ShapeError(f"window must be (K, J, 3), got {window.shape}")
    pred, per_branch = predict_short_batch(window[:, None], model, mode, rng)
    return Prediction(
        frames=_as_numpy(pred)[:, 0],
        per_branch={d: _as_numpy(p)[:, 0] for d, p in per_branch.items()},
        model_id=model.cfg.label,
        window_id=window_id,
    )


def predict_long(window: np.ndarray, model: PmsModel, horizon: int = 25, mode: str = "infer", rng=None, window_id: str = "window") -> Prediction:
    """Single-window long-horizon forecast; frames[:L] equal the short forecast."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 3:
        raise ShapeError(f"window must be (K, J, 3), got {window.shape}")
    out = predict_long_batch(window[:, None], model, horizon, mode, rng)
    _, per_branch = predict_short_batch(window[:, None], model, mode, rng)
    return Prediction(
        frames=_as_numpy(out)[:, 0],
        per_branch={d: _as_numpy(p)[:, 0] for d, p in per_branch.items()},
        model_id=model.cfg.label,
        window_id=window_id,
    )


# ---- persistence -----------------------------------------------------------


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv(values) -> str:
    return ",".join(_format_value(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in values)


def _config_lines(model: PmsModel) -> list[str]:
    cfg = model.cfg
    pairs: list[tuple[str, str]] = [
        ("joints", str(cfg.joints)),
        ("k", str(cfg.k)),
        ("l", str(cfg.l)),
        ("hidden", str(cfg.hidden)),
        ("scales", _csv(cfg.scales)),
        ("anchor", cfg.anchor),
        ("adjust_rounds", str(cfg.adjust_rounds)),
        ("increment_sign", _format_value(cfg.increment_sign)),
        ("drop_rate", _format_value(cfg.drop_rate)),
        ("activation", cfg.activation),
        ("fc_bias", _format_value(cfg.fc_bias)),
        ("bn_relu", _format_value(cfg.bn_relu)),
        ("accel_correction", _format_value(cfg.accel_correction)),
        ("velocity_fusion", _format_value(cfg.velocity_fusion)),
        ("bn.eps", _format_value(cfg.bn_eps)),
        ("bn.momentum", _format_value(cfg.bn_momentum)),
        ("seed", str(cfg.seed)),
        ("label", cfg.label),
    ]
    for d in cfg.scales:
        pairs.append((f"alpha.{d}", _csv([float(x) for x in cfg.alpha[d]])))
        pairs.append((f"beta.{d}", _csv([float(x) for x in cfg.beta[d]])))
        pairs.append((f"gamma.{d}", _csv([float(x) for x in cfg.gamma[d]])))
        pairs.append((f"combine.{d}", _format_value(float(cfg.combine[d]))))
    stats = model.norm_stats
    pairs.append(("norm.present", _format_value(stats is not None)))
    if stats is not None:
        for name in ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max"):
            pairs.append((f"norm.{name}", _format_value(getattr(stats, name))))
    return [f"{k} = {v}" for k, v in sorted(pairs)]


def _parse_config_block(text: str) -> tuple[ModelConfig, NormStats | None]:
    kv: dict[str, str] = {}
    for raw in text.split("\n"):
        line = raw.strip()
        if not line:
            continue
        if " = " not in line:
            raise LoadError(f"malformed config line {line!r}")
        key, value = line.split(" = ", 1)
        kv[key.strip()] = value.strip()

    def need(key: str) -> str:
        if key not in kv:
            raise LoadError(f"model container is missing config key {key!r}")
        return kv[key]

    def as_bool(s: str) -> bool:
        if s not in ("true", "false"):
            raise LoadError(f"bad boolean {s!r} in model container")
        return s == "true"

    scales = tuple(int(x) for x in need("scales").split(","))
    cfg = ModelConfig(
        joints=int(need("joints")),
        k=int(need("k")),
        l=int(need("l")),
        hidden=int(need("hidden")),
        scales=scales,
        anchor=need("anchor"),
        alpha={d: tuple(float(x) for x in need(f"alpha.{d}").split(",")) for d in scales},
        beta={d: tuple(float(x) for x in need(f"beta.{d}").split(",")) for d in scales},
        gamma={d: np.array([float(x) for x in need(f"gamma.{d}").split(",")]) for d in scales},
        combine={d: float(need(f"combine.{d}")) for d in scales},
        adjust_rounds=int(need("adjust_rounds")),
        increment_sign=float(need("increment_sign")),
        drop_rate=float(need("drop_rate")),
        activation=need("activation"),
        fc_bias=as_bool(need("fc_bias")),
        bn_relu=as_bool(need("bn_relu")),
        accel_correction=as_bool(need("accel_correction")),
        velocity_fusion=as_bool(need("velocity_fusion")),
        bn_eps=float(need("bn.eps")),
        bn_momentum=float(need("bn.momentum")),
        seed=int(need("seed")),
        label=need("label"),
    )
    stats = None
    if as_bool(need("norm.present")):
        stats = NormStats(
            x_min=float(need("norm.x_min")),
            x_max=float(need("norm.x_max")),
            y_min=float(need("norm.y_min")),
            y_max=float(need("norm.y_max")),
            z_min=float(need("norm.z_min")),
            z_max=float(need("norm.z_max")),
        )
    return cfg, stats


def model_to_bytes(model: PmsModel) -> bytes:
    buf = BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", CONTAINER_VERSION))
    config = ("\n".join(_config_lines(model)) + "\n").encode("utf-8")
    buf.write(struct.pack("<Q", len(config)))
    buf.write(config)
    for name, holder, attr in sorted(model.tensor_slots()):
        value = getattr(holder, attr)
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<Q", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<Q", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def save_model(model: PmsModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def _read_exact(buf: BytesIO, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise LoadError(f"model container truncated while reading {what}")
    return data


def model_from_bytes(blob: bytes) -> PmsModel:
    buf = BytesIO(blob)
    magic = buf.read(4)
    if magic != MAGIC:
        raise LoadError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(buf, 4, "version"))
    if version != CONTAINER_VERSION:
        raise LoadError(f"unsupported container version {version}, expected {CONTAINER_VERSION}")
    (config_len,) = struct.unpack("<Q", _read_exact(buf, 8, "config length"))
    config_text = _read_exact(buf, config_len, "config block").decode("utf-8")
    try:
        cfg, stats = _parse_config_block(config_text)
    except LoadError:
        raise
    except (ConfigError, ValueError) as exc:
        raise LoadError(f"model container config block is invalid: {exc}") from None
    model = build_model(cfg, norm_stats=stats, init=False)

    slots = {name: (holder, attr) for name, holder, attr in model.tensor_slots()}
    seen = set()
    while True:
        head = buf.read(8)
        if len(head) == 0:
            break
        if len(head) != 8:
            raise LoadError("model container truncated while reading a tensor name length")
        (name_len,) = struct.unpack("<Q", head)
        name = _read_exact(buf, name_len, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<Q", _read_exact(buf, 8, f"rank of tensor {name!r}"))
        shape = tuple(
            struct.unpack("<Q", _read_exact(buf, 8, f"dimensions of tensor {name!r}"))[0] for _ in range(rank)
        )
        count = int(np.prod(shape)) if shape else 1
        raw = _read_exact(buf, 8 * count, f"values of tensor {name!r}")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if name not in slots:
            raise LoadError(f"model container holds unknown tensor {name!r}")
        if name in seen:
            raise LoadError(f"model container repeats tensor {name!r}")
        seen.add(name)
        holder, attr = slots[name]
        current = getattr(holder, attr)
        want = current.data.shape if isinstance(current, Tensor) else np.asarray(current).shape
        if tuple(want) != shape:
            raise LoadError(f"tensor {name!r} has shape {shape}, expected {tuple(want)}")
        if isinstance(current, Tensor):
            current.data = np.ascontiguousarray(arr)
        else:
            setattr(holder, attr, np.ascontiguousarray(arr))
    missing = sorted(set(slots) - seen)
    if missing:
        raise LoadError(f"model container is missing tensors: {', '.join(missing)}")
    return model


def load_model(path) -> PmsModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
