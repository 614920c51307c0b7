"""Flat run configuration: the key reference, parsing, merging, builders.

A configuration file is one ``key = value`` per line with ``#`` comments.
Values stay strings until a builder converts them; merge precedence is
defaults, then file, then command-line overrides, then the PMS_SEED
environment variable (seed only).  Unknown keys are rejected everywhere.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import SynthSpec
from .errors import ConfigError
from .increments import DEFAULT_ALPHA, DEFAULT_BETA, combine_weights_for
from .losses import LossConfig
from .model import ModelConfig, gamma_schedule
from .training import StagePlan, TrainSettings


@dataclass(frozen=True)
class KeySpec:
    default: str
    kind: str  # int | float | bool | str | ints | floats | choice
    help: str
    choices: tuple[str, ...] = ()


KEYS: dict[str, KeySpec] = {
    "seed": KeySpec("0", "int", "master seed for weights, shuffling, dropout, synthesis"),
    "label": KeySpec("pms", "str", "model label stored in the container"),
    "fps": KeySpec("25", "float", "frame rate used by synthesis and horizon labels"),
    "k": KeySpec("50", "int", "observed frames per window"),
    "l": KeySpec("10", "int", "predicted frames per forecasting step"),
    "extended": KeySpec("30", "int", "extra ground-truth frames kept per window"),
    "stride": KeySpec("10", "int", "spacing between window starts, in frames"),
    "scales": KeySpec("10,5,2", "ints", "sampling intervals, one branch pair per entry"),
    "anchor": KeySpec("end", "choice", "segment alignment within the window", ("end", "start")),
    "hidden": KeySpec("256", "int", "recurrent hidden width"),
    "gamma.rho": KeySpec("0.8", "float", "attenuation decay base; frame n gets rho**(n-1)"),
    "gamma.explicit": KeySpec("", "floats", "explicit attenuation coefficients, overriding gamma.rho"),
    "combine_weights": KeySpec("equal", "str", "cross-interval blend: 'equal' or a csv summing to 1"),
    "adjust_rounds": KeySpec("1", "int", "iterative refinement passes per forecast"),
    "increment_sign": KeySpec("-1", "float", "sign applied to the attenuated increment: -1 or 1"),
    "drop_rate": KeySpec("0.4", "float", "dropout rate inside each branch"),
    "activation": KeySpec("relu", "choice", "branch activation", ("relu", "tanh")),
    "fc_bias": KeySpec("true", "bool", "bias terms on the dense layers"),
    "bn_relu": KeySpec("true", "bool", "batch norm + activation + dropout block"),
    "accel_correction": KeySpec("true", "bool", "add the acceleration branch to the velocity increment"),
    "velocity_fusion": KeySpec("true", "bool", "blend all velocity diffs (false: newest diff only)"),
    "bn.eps": KeySpec("1e-05", "float", "batch norm variance floor"),
    "bn.momentum": KeySpec("0.1", "float", "batch norm running-statistics update rate"),
    "loss.past_deltas": KeySpec("2,5,10", "ints", "past sub-window lengths entering the history loss"),
    "loss.future_deltas": KeySpec("20,30", "ints", "continuation lengths entering the rollout loss"),
    "loss.extra_accum": KeySpec("5", "ints", "batch group sizes granted an extra accumulated update"),
    "loss.rollout_frames": KeySpec("", "ints", "total rollout supervision lengths, replacing continuation terms"),
    "batch_size": KeySpec("32", "int", "windows per mini-batch"),
    "lr": KeySpec("0.005", "float", "learning rate of the early stages"),
    "lr_late": KeySpec("0.001", "float", "learning rate of the late stages"),
    "lr_scale": KeySpec("1.0", "float", "multiplier applied to both learning rates"),
    "epochs_per_stage": KeySpec("10", "int", "epochs in each of the four stages"),
    "train_mode": KeySpec("pooled", "choice", "one model over all actions, or one per action", ("pooled", "per_action")),
    "divergence_factor": KeySpec("10.0", "float", "abort when mean epoch loss exceeds this multiple of the first epoch's"),
    "adam.beta1": KeySpec("0.9", "float", "first-moment decay"),
    "adam.beta2": KeySpec("0.999", "float", "second-moment decay"),
    "adam.epsilon": KeySpec("1e-08", "float", "denominator floor"),
    "synth.sequences": KeySpec("4", "int", "number of synthetic sequences to generate"),
    "synth.joints": KeySpec("8", "int", "joints per synthetic sequence"),
    "synth.frames": KeySpec("200", "int", "frames per synthetic sequence"),
    "synth.sinusoids": KeySpec("3", "int", "sinusoids summed per joint axis"),
    "synth.freq_min": KeySpec("0.2", "float", "lowest sinusoid frequency, Hz"),
    "synth.freq_max": KeySpec("1.0", "float", "highest sinusoid frequency, Hz"),
    "synth.amplitude": KeySpec("1.0", "float", "amplitude cap per sinusoid"),
    "synth.noise_std": KeySpec("0.01", "float", "Gaussian noise level"),
    "synth.trend_break": KeySpec("", "ints", "frame index of a regime change, empty for none"),
    "eval.horizons_ms": KeySpec("80,160,320,400,560,1000", "ints", "evaluation horizons in milliseconds"),
    "eval.batch": KeySpec("256", "int", "windows per evaluation chunk"),
}

# Per-interval fusion weights are keyed by the interval itself.
PATTERN_KEYS: dict[str, KeySpec] = {
    "alpha.<interval>": KeySpec(",".join(str(x) for x in DEFAULT_ALPHA), "floats",
                                "velocity fusion weights for one interval (4 values, sum 1)"),
    "beta.<interval>": KeySpec(",".join(str(x) for x in DEFAULT_BETA), "floats",
                               "acceleration fusion weights for one interval (3 values, sum 1)"),
}

_TRUE = ("true", "1", "yes", "on")
_FALSE = ("false", "0", "no", "off")


def _pattern_spec(key: str) -> KeySpec | None:
    head, _, tail = key.partition(".")
    if head in ("alpha", "beta") and tail.isdigit() and int(tail) >= 1:
        return PATTERN_KEYS[f"{head}.<interval>"]
    return None


def key_spec(key: str) -> KeySpec:
    spec = KEYS.get(key) or _pattern_spec(key)
    if spec is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    return spec


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def parse_ints(text: str) -> tuple[int, ...]:
    items = [tok.strip() for tok in text.split(",") if tok.strip() != ""]
    try:
        return tuple(int(tok) for tok in items)
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def parse_floats(text: str) -> tuple[float, ...]:
    items = [tok.strip() for tok in text.split(",") if tok.strip() != ""]
    try:
        out = tuple(float(tok) for tok in items)
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None
    if any(not math.isfinite(x) for x in out):
        raise ConfigError(f"non-finite number in {text!r}")
    return out


def check_value(key: str, value: str) -> None:
    """Reject values the key's type cannot hold; unknown keys are rejected too."""
    spec = key_spec(key)
    if spec.kind == "int":
        try:
            int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    elif spec.kind == "float":
        try:
            v = float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
        if not math.isfinite(v):
            raise ConfigError(f"{key}: expected a finite number, got {value!r}")
    elif spec.kind == "bool":
        try:
            parse_bool(value)
        except ConfigError:
            raise ConfigError(f"{key}: expected a boolean, got {value!r}") from None
    elif spec.kind == "ints":
        try:
            parse_ints(value)
        except ConfigError:
            raise ConfigError(f"{key}: expected comma-separated integers, got {value!r}") from None
    elif spec.kind == "floats":
        try:
            parse_floats(value)
        except ConfigError:
            raise ConfigError(f"{key}: expected comma-separated numbers, got {value!r}") from None
    elif spec.kind == "choice":
        if value not in spec.choices:
            raise ConfigError(f"{key}: expected one of {spec.choices}, got {value!r}")


def default_config() -> dict[str, str]:
    return {key: spec.default for key, spec in KEYS.items()}


def parse_config_text(text: str, source: str = "config") -> dict[str, str]:
    """Strict ``key = value`` lines; comments and blanks skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source} line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source} line {lineno}: duplicate key {key!r}")
        try:
            check_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source} line {lineno}: {exc}") from None
        out[key] = value
    return out


def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration file {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def merge_config(
    file_cfg: dict[str, str] | None = None,
    overrides: dict[str, str] | None = None,
    env: dict[str, str] | None = None,
) -> dict[str, str]:
    """defaults <- file <- overrides <- PMS_SEED; every key and value checked."""
    cfg = default_config()
    for layer in (file_cfg, overrides):
        if not layer:
            continue
        for key, value in layer.items():
            check_value(key, str(value))
            cfg[key] = str(value)
    env = os.environ if env is None else env
    seed_txt = env.get("PMS_SEED")
    if seed_txt is not None:
        check_value("seed", seed_txt)
        cfg["seed"] = seed_txt
    return cfg


def format_config(cfg: dict[str, str]) -> str:
    return "".join(f"{key} = {cfg[key]}\n" for key in sorted(cfg))


def write_resolved(cfg: dict[str, str], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved.cfg"
    path.write_text(format_config(cfg), encoding="utf-8")
    return path


def key_reference() -> str:
    """The documented key list, one line per key."""
    lines = []
    for table in (KEYS, PATTERN_KEYS):
        for key, spec in table.items():
            extra = f" ({'|'.join(spec.choices)})" if spec.choices else ""
            lines.append(f"{key} = {spec.default}".ljust(40) + f"# {spec.help}{extra}")
    return "\n".join(lines)


# ---- builders ----------------------------------------------------------------


def build_model_config(cfg: dict[str, str], joints: int) -> ModelConfig:
    scales = parse_ints(cfg["scales"])
    if not scales:
        raise ConfigError("scales must name at least one sampling interval")
    l = int(cfg["l"])
    explicit = parse_floats(cfg["gamma.explicit"])
    rho = float(cfg["gamma.rho"])
    gamma = {}
    for d in scales:
        need = math.ceil(l / d) * d
        gamma[d] = np.asarray(explicit, dtype=np.float64) if explicit else gamma_schedule(rho, need)
    alpha = {d: parse_floats(cfg.get(f"alpha.{d}", PATTERN_KEYS["alpha.<interval>"].default)) for d in scales}
    beta = {d: parse_floats(cfg.get(f"beta.{d}", PATTERN_KEYS["beta.<interval>"].default)) for d in scales}
    return ModelConfig(
        joints=joints,
        k=int(cfg["k"]),
        l=l,
        hidden=int(cfg["hidden"]),
        scales=scales,
        anchor=cfg["anchor"],
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        combine=combine_weights_for(scales, cfg["combine_weights"]),
        adjust_rounds=int(cfg["adjust_rounds"]),
        increment_sign=float(cfg["increment_sign"]),
        drop_rate=float(cfg["drop_rate"]),
        activation=cfg["activation"],
        fc_bias=parse_bool(cfg["fc_bias"]),
        bn_relu=parse_bool(cfg["bn_relu"]),
        accel_correction=parse_bool(cfg["accel_correction"]),
        velocity_fusion=parse_bool(cfg["velocity_fusion"]),
        bn_eps=float(cfg["bn.eps"]),
        bn_momentum=float(cfg["bn.momentum"]),
        seed=int(cfg["seed"]),
        label=cfg["label"],
    )


def build_stage_plan(cfg: dict[str, str]) -> StagePlan:
    return StagePlan.default(
        seed=int(cfg["seed"]),
        epochs=int(cfg["epochs_per_stage"]),
        lr=float(cfg["lr"]),
        lr_late=float(cfg["lr_late"]),
        lr_scale=float(cfg["lr_scale"]),
    )


def build_train_settings(cfg: dict[str, str]) -> TrainSettings:
    return TrainSettings(
        batch_size=int(cfg["batch_size"]),
        past_deltas=parse_ints(cfg["loss.past_deltas"]),
        future_deltas=parse_ints(cfg["loss.future_deltas"]),
        extra_accum=parse_ints(cfg["loss.extra_accum"]),
        rollout_frames=parse_ints(cfg["loss.rollout_frames"]),
        beta1=float(cfg["adam.beta1"]),
        beta2=float(cfg["adam.beta2"]),
        epsilon=float(cfg["adam.epsilon"]),
        divergence_factor=float(cfg["divergence_factor"]),
    )


def build_loss_config(cfg: dict[str, str]) -> LossConfig:
    return LossConfig(
        past_deltas=parse_ints(cfg["loss.past_deltas"]),
        future_deltas=parse_ints(cfg["loss.future_deltas"]),
    )


def build_synth_spec(cfg: dict[str, str], seed: int, name: str) -> SynthSpec:
    breaks = parse_ints(cfg["synth.trend_break"])
    if len(breaks) > 1:
        raise ConfigError(f"synth.trend_break takes at most one frame index, got {cfg['synth.trend_break']!r}")
    return SynthSpec(
        joints=int(cfg["synth.joints"]),
        frames=int(cfg["synth.frames"]),
        fps=float(cfg["fps"]),
        sinusoids=int(cfg["synth.sinusoids"]),
        freq_min=float(cfg["synth.freq_min"]),
        freq_max=float(cfg["synth.freq_max"]),
        amplitude=float(cfg["synth.amplitude"]),
        noise_std=float(cfg["synth.noise_std"]),
        trend_break=breaks[0] if breaks else None,
        seed=seed,
        name=name,
    )


def eval_horizons_frames(cfg: dict[str, str]) -> tuple[int, ...]:
    """Millisecond horizons snapped to whole frames at the configured rate."""
    fps = float(cfg["fps"])
    frames = []
    for ms in parse_ints(cfg["eval.horizons_ms"]):
        h = int(round(ms * fps / 1000.0))
        if h < 1:
            raise ConfigError(f"horizon {ms} ms is under one frame at {fps} fps")
        frames.append(h)
    if not frames:
        raise ConfigError("eval.horizons_ms must name at least one horizon")
    return tuple(frames)
