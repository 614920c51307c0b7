"""Staged training, the ablation catalogue, and model evaluation.

The default plan has four stages of equal length: standard loss at the base
learning rate, the same plus periodic extra updates on accumulated batch
losses, standard loss at the reduced rate, and finally the rollout
(long-term) supervision at the reduced rate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataio import NormStats, UnitWindow, denormalize
from .errors import ConfigError, DataError, DivergenceError
from .losses import DEFAULT_FUTURE_DELTAS, DEFAULT_PAST_DELTAS, loss_current, loss_past
from .model import (
    ModelConfig,
    PmsModel,
    build_model,
    predict_long_batch,
    predict_short_batch,
    save_model,
)
from .numerics.optim import AdamConfig, ParamGroup, adam_step
from .numerics.rng import RngState
from .numerics.tensor import Tensor, backward, tabs, tmean

LOSS_MODES = ("standard", "plus_5x_accumulated", "plus_longterm")


@dataclass(frozen=True)
class Stage:
    epochs: int
    learning_rate: float
    loss_mode: str = "standard"
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"a stage needs at least 1 epoch, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.learning_rate}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"unknown loss mode {self.loss_mode!r}, expected one of {LOSS_MODES}")


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("training plan has no stages")

    @staticmethod
    def default(
        seed: int = 0,
        epochs: int = 10,
        lr: float = 5e-3,
        lr_late: float = 1e-3,
        lr_scale: float = 1.0,
    ) -> "StagePlan":
        return StagePlan(
            stages=(
                Stage(epochs, lr * lr_scale, "standard", seed + 1),
                Stage(epochs, lr * lr_scale, "plus_5x_accumulated", seed + 2),
                Stage(epochs, lr_late * lr_scale, "standard", seed + 3),
                Stage(epochs, lr_late * lr_scale, "plus_longterm", seed + 4),
            )
        )


@dataclass
class TrainSettings:
    batch_size: int = 32
    past_deltas: tuple[int, ...] = DEFAULT_PAST_DELTAS
    future_deltas: tuple[int, ...] = DEFAULT_FUTURE_DELTAS
    extra_accum: tuple[int, ...] = (5,)
    rollout_frames: tuple[int, ...] = ()
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch size must be at least 2, got {self.batch_size}")
        if any(n < 2 for n in self.extra_accum):
            raise ConfigError(f"accumulation group sizes must be at least 2, got {self.extra_accum}")


@dataclass(frozen=True)
class EpochStats:
    stage: int
    epoch: int
    l_p: float
    l_c: float
    l_f: float
    l_a: float
    skipped_future_terms: int

    def log_line(self) -> str:
        return f"stage={self.stage} epoch={self.epoch} l_p={self.l_p!r} l_c={self.l_c!r} l_f={self.l_f!r} l_a={self.l_a!r}"


def _batch_tensors(windows: list[UnitWindow], idx: np.ndarray):
    """Stack a batch frame-major, longest extended future first."""
    chosen = sorted((int(i) for i in idx), key=lambda i: (-windows[i].extended_future.shape[0], i))
    obs = np.stack([windows[i].observed for i in chosen], axis=1)
    tgt = np.stack([windows[i].target for i in chosen], axis=1)
    ext_lens = np.array([windows[i].extended_future.shape[0] for i in chosen])
    max_ext = int(ext_lens.max()) if len(ext_lens) else 0
    j = obs.shape[2]
    ext = np.zeros((max_ext, len(chosen), j, 3))
    for col, i in enumerate(chosen):
        e = windows[i].extended_future
        ext[: e.shape[0], col] = e
    return obs, tgt, ext, ext_lens


def _mean_l1_t(pred, truth) -> Tensor:
    return tmean(tabs(pred - truth))


def _rollout_loss(rollout, tgt, ext, ext_lens, settings: TrainSettings, l: int):
    """Long-term supervision on a sorted batch; returns (term or None, skipped)."""
    total = None
    skipped = 0
    if settings.rollout_frames:
        # Total-length terms: the first F frames of the rollout against
        # target frames extended with ground truth.
        full_truth = np.concatenate([tgt, ext], axis=0) if ext.shape[0] else tgt
        for frames in settings.rollout_frames:
            need_ext = max(0, frames - l)
            eligible = int(np.sum(ext_lens >= need_ext))
            if eligible == 0 or full_truth.shape[0] < frames:
                skipped += 1
                continue
            term = _mean_l1_t(rollout[:frames, :eligible], full_truth[:frames, :eligible])
            total = term if total is None else total + term
    else:
        # Continuation terms: frames beyond the base horizon against the
        # extended ground truth alone.
        beyond = rollout[l:]
        for delta in settings.future_deltas:
            eligible = int(np.sum(ext_lens >= delta))
            if eligible == 0:
                skipped += 1
                continue
            term = _mean_l1_t(beyond[:delta, :eligible], ext[:delta, :eligible])
            total = term if total is None else total + term
    return total, skipped


def run_stage(
    model: PmsModel,
    group: ParamGroup,
    windows: list[UnitWindow],
    stage: Stage,
    settings: TrainSettings,
    dropout_rng: RngState,
    stage_index: int = 1,
) -> list[EpochStats]:
    """One stage of mini-batch training; aborts on a 10x loss blow-up."""
    if not windows:
        raise DataError("no training windows")
    cfg = model.cfg
    adam_cfg = AdamConfig(stage.learning_rate, settings.beta1, settings.beta2, settings.epsilon)
    n = len(windows)
    if stage.loss_mode == "plus_longterm":
        if settings.rollout_frames:
            horizon = max(max(settings.rollout_frames), cfg.l)
        else:
            horizon = cfg.l + max(settings.future_deltas)
    else:
        horizon = cfg.l

    stats: list[EpochStats] = []
    initial_mean = None
    accum: dict[int, list[Tensor]] = {}
    for epoch in range(1, stage.epochs + 1):
        perm = np.random.default_rng([stage.shuffle_seed, epoch]).permutation(n)
        if stage.loss_mode == "plus_5x_accumulated":
            accum = {size: [] for size in settings.extra_accum}
        sums = np.zeros(4)
        skipped_total = 0
        batches = 0
        for lo in range(0, n, settings.batch_size):
            idx = perm[lo : lo + settings.batch_size]
            if len(idx) < 2:
                continue  # batch norm requires at least 2 windows
            obs, tgt, ext, ext_lens = _batch_tensors(windows, idx)
            if stage.loss_mode == "plus_longterm":
                rollout = predict_long_batch(obs, model, horizon, mode="train", rng=dropout_rng)
                pred = rollout[: cfg.l]
                l_f, skipped = _rollout_loss(rollout, tgt, ext, ext_lens, settings, cfg.l)
            else:
                pred, _ = predict_short_batch(obs, model, mode="train", rng=dropout_rng)
                l_f, skipped = None, len(settings.future_deltas)
            l_p = loss_past(pred, tgt, settings.past_deltas)
            l_c = loss_current(pred, tgt)
            loss = l_p + l_c if l_f is None else l_p + l_c + l_f
            group.zero_grad()
            backward(loss)
            adam_step(group, group.gradients(), adam_cfg)

            if stage.loss_mode == "plus_5x_accumulated":
                for size, ring in accum.items():
                    ring.append(loss)
                    if len(ring) == size:
                        extra = ring[0]
                        for piece in ring[1:]:
                            extra = extra + piece
                        group.zero_grad()
                        backward(extra)
                        adam_step(group, group.gradients(), adam_cfg)
                        ring.clear()

            sums += (
                float(l_p),
                float(l_c),
                0.0 if l_f is None else float(l_f),
                float(loss),
            )
            skipped_total += skipped
            batches += 1
        if batches == 0:
            raise DataError(f"batch size {settings.batch_size} yields no usable batch from {n} windows")
        means = [float(x) for x in sums / batches]
        stats.append(
            EpochStats(
                stage=stage_index,
                epoch=epoch,
                l_p=means[0],
                l_c=means[1],
                l_f=means[2],
                l_a=means[3],
                skipped_future_terms=skipped_total,
            )
        )
        if initial_mean is None:
            initial_mean = means[3]
        elif initial_mean > 0 and means[3] > settings.divergence_factor * initial_mean:
            raise DivergenceError(
                f"stage {stage_index} epoch {epoch}: mean loss {means[3]!r} exceeds "
                f"{settings.divergence_factor}x the initial epoch's {initial_mean!r}"
            )
    return stats


def train_multistage(
    model: PmsModel,
    windows: list[UnitWindow],
    plan: StagePlan,
    settings: TrainSettings,
    out_dir=None,
    file_prefix: str = "model",
) -> list[EpochStats]:
    """Run every stage in order, checkpointing after each one."""
    from pathlib import Path

    group = model.param_group()
    dropout_rng = RngState(model.cfg.seed)
    all_stats: list[EpochStats] = []
    for si, stage in enumerate(plan.stages, start=1):
        all_stats.extend(run_stage(model, group, windows, stage, settings, dropout_rng, stage_index=si))
        if out_dir is not None:
            save_model(model, Path(out_dir) / f"{file_prefix}.stage{si}.pms")
    return all_stats


def merge_norm_stats(stats: list[NormStats]) -> NormStats:
    """Union extrema across actions (the pooled model's bookkeeping stats)."""
    if not stats:
        raise DataError("no normalization statistics to merge")
    return NormStats(
        x_min=min(s.x_min for s in stats),
        x_max=max(s.x_max for s in stats),
        y_min=min(s.y_min for s in stats),
        y_max=max(s.y_max for s in stats),
        z_min=min(s.z_min for s in stats),
        z_max=max(s.z_max for s in stats),
    )


def train_actions(
    datasets: dict[str, tuple[list[UnitWindow], NormStats]],
    base_cfg: ModelConfig,
    plan: StagePlan,
    settings: TrainSettings,
    mode: str = "pooled",
    out_dir=None,
) -> tuple[dict[str, PmsModel], list[EpochStats]]:
    """Train one pooled model or one model per action.

    Returns models keyed by output file stem ('model' for pooled,
    'model.<action>' otherwise) plus the concatenated epoch statistics.
    """
    if mode not in ("pooled", "per_action"):
        raise ConfigError(f"train mode must be 'pooled' or 'per_action', got {mode!r}")
    if not datasets:
        raise DataError("no training data")
    models: dict[str, PmsModel] = {}
    stats_out: list[EpochStats] = []
    if mode == "pooled":
        windows = [w for ws, _ in datasets.values() for w in ws]
        stats = merge_norm_stats([s for _, s in datasets.values()])
        model = build_model(base_cfg, norm_stats=stats)
        stats_out.extend(train_multistage(model, windows, plan, settings, out_dir, "model"))
        models["model"] = model
    else:
        for action in sorted(datasets):
            windows, stats = datasets[action]
            seed = RngState(base_cfg.seed).derive_seed(f"action:{action}")
            cfg = replace(base_cfg, seed=seed, alpha=dict(base_cfg.alpha), beta=dict(base_cfg.beta), gamma=dict(base_cfg.gamma), combine=dict(base_cfg.combine))
            model = build_model(cfg, norm_stats=stats)
            stats_out.extend(train_multistage(model, windows, plan, settings, out_dir, f"model.{action}"))
            models[f"model.{action}"] = model
    return models, stats_out


# ---- ablation catalogue ------------------------------------------------------

_BASELINE1 = {
    "fc_bias": "false",
    "bn_relu": "false",
    "loss.extra_accum": "",
    "loss.rollout_frames": "",
}
# The second baseline folds the first three single-feature variations back in.
_BASELINE2_DIFF = {
    "fc_bias": "true",
    "bn_relu": "true",
    "loss.extra_accum": "5",
}
_BASELINE2 = {**_BASELINE1, **_BASELINE2_DIFF}
_BASELINE2_V2 = {**_BASELINE2, "lr_scale": "0.2"}

ABLATION_VARIANTS: dict[str, dict[str, str]] = {
    "baseline1": dict(_BASELINE1),
    "fc_bias": {**_BASELINE1, "fc_bias": "true"},
    "bn_relu": {**_BASELINE1, "bn_relu": "true"},
    "loss_5x": {**_BASELINE1, "loss.extra_accum": "5"},
    "loss_2_5_10x": {**_BASELINE1, "loss.extra_accum": "2,5,10"},
    "loss_800ms": {**_BASELINE1, "loss.rollout_frames": "20"},
    "baseline2": dict(_BASELINE2),
    "wo_t2": {**_BASELINE2, "scales": "10,5"},
    "wo_t5": {**_BASELINE2, "scales": "10,2"},
    "wo_t10": {**_BASELINE2, "scales": "5,2"},
    "wo_a": {**_BASELINE2, "accel_correction": "false"},
    "wo_vf": {**_BASELINE2, "velocity_fusion": "false", "accel_correction": "false"},
    "w_0406": {**_BASELINE2, "alpha": "0,0,0.4,0.6"},
    "baseline2_v2": dict(_BASELINE2_V2),
    "loss_6x": {**_BASELINE2_V2, "loss.extra_accum": "5,6"},
    "loss_480ms": {**_BASELINE2_V2, "loss.rollout_frames": "12"},
    "loss_600ms": {**_BASELINE2_V2, "loss.rollout_frames": "15"},
}


def apply_ablation(base: dict[str, str], variant: str) -> dict[str, str]:
    """Overlay one named variant onto a flat configuration mapping.

    Scale-removal variants renormalize explicit combination weights; the
    'alpha' pseudo-key fans out to every remaining interval.
    """
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; known: {', '.join(sorted(ABLATION_VARIANTS))}")
    out = dict(base)
    overrides = dict(ABLATION_VARIANTS[variant])
    alpha_override = overrides.pop("alpha", None)
    new_scales = overrides.get("scales")
    if new_scales is not None:
        old_scales = [int(x) for x in out.get("scales", "10,5,2").split(",")]
        kept = [int(x) for x in new_scales.split(",")]
        spec = out.get("combine_weights", "equal")
        if spec not in ("", "equal"):
            old_w = [float(x) for x in spec.split(",")]
            w = [old_w[old_scales.index(d)] for d in kept]
            total = sum(w)
            if total <= 0:
                raise ConfigError(f"combination weights for {kept} sum to zero after removing a scale")
            overrides["combine_weights"] = ",".join(repr(x / total) for x in w)
    out.update(overrides)
    if alpha_override is not None:
        for d in [int(x) for x in out.get("scales", "10,5,2").split(",")]:
            out[f"alpha.{d}"] = alpha_override
    return out


# ---- evaluation --------------------------------------------------------------


@dataclass
class EvalReport:
    """Per-action, per-horizon MPJPE for the model and two simple baselines."""

    horizons_frames: tuple[int, ...]
    fps: float
    per_action: dict[str, dict[str, dict[int, float]]]
    per_action_denorm: dict[str, dict[str, dict[int, float]]] | None
    window_counts: dict[str, int]

    SOURCES = ("model", "zero_velocity", "constant_velocity")

    def actions(self) -> list[str]:
        return sorted(self.per_action)

    def horizon_ms(self, h: int) -> float:
        return h * 1000.0 / self.fps

    def overall(self, source: str, h: int, denorm: bool = False) -> float:
        table = self.per_action_denorm if denorm else self.per_action
        return float(np.mean([table[a][source][h] for a in self.actions()]))

    def action_average(self, action: str, source: str, denorm: bool = False) -> float:
        table = self.per_action_denorm if denorm else self.per_action
        return float(np.mean([table[action][source][h] for h in self.horizons_frames]))

    def average(self, source: str, denorm: bool = False) -> float:
        return float(np.mean([self.action_average(a, source, denorm) for a in self.actions()]))

    def action_variance(self, source: str, denorm: bool = False) -> float:
        means = [self.action_average(a, source, denorm) for a in self.actions()]
        return float(np.var(means))

    def _ms_key(self, h: int) -> str:
        ms = self.horizon_ms(h)
        return str(int(ms)) if float(ms).is_integer() else repr(ms)

    def to_kv(self) -> list[str]:
        lines = [
            f"horizons_frames = {','.join(str(h) for h in self.horizons_frames)}",
            f"fps = {self.fps!r}",
            f"windows = {sum(self.window_counts.values())}",
        ]
        for h in self.horizons_frames:
            lines.append(f"horizon_ms.{self._ms_key(h)} = {self.overall('model', h)!r}")
        lines.append(f"average = {self.average('model')!r}")
        lines.append(f"action_variance = {self.action_variance('model')!r}")
        if self.per_action_denorm is not None:
            for h in self.horizons_frames:
                lines.append(f"horizon_ms.{self._ms_key(h)}.denorm = {self.overall('model', h, True)!r}")
            lines.append(f"average.denorm = {self.average('model', True)!r}")
        for source in ("zero_velocity", "constant_velocity"):
            for h in self.horizons_frames:
                lines.append(f"baseline.{source}.horizon_ms.{self._ms_key(h)} = {self.overall(source, h)!r}")
            lines.append(f"baseline.{source}.average = {self.average(source)!r}")
        for action in self.actions():
            for h in self.horizons_frames:
                lines.append(f"action.{action}.horizon_ms.{self._ms_key(h)} = {self.per_action[action]['model'][h]!r}")
            lines.append(f"action.{action}.average = {self.action_average(action, 'model')!r}")
        return lines

    def to_table(self) -> str:
        headers = ["source"] + [f"{self._ms_key(h)}ms" for h in self.horizons_frames] + ["average"]
        rows = [headers]
        for source in self.SOURCES:
            rows.append(
                [source]
                + [f"{self.overall(source, h):.6f}" for h in self.horizons_frames]
                + [f"{self.average(source):.6f}"]
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
        out = []
        for r in rows:
            out.append("  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))))
        return "\n".join(out)


def _cumulative_mpjpe(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """(H, B, J, 3) pair -> (H, B) mean distance over the first h frames."""
    dist = np.sqrt(np.sum((pred - truth) ** 2, axis=-1))  # (H, B, J)
    per_frame = dist.mean(axis=2)  # (H, B)
    cums = np.cumsum(per_frame, axis=0)
    counts = np.arange(1, pred.shape[0] + 1)[:, None]
    return cums / counts


def evaluate_model(
    model: PmsModel,
    windows: list[UnitWindow],
    horizons_frames: tuple[int, ...] = (2, 4, 8, 10, 14, 25),
    stats_by_action: dict[str, NormStats] | None = None,
    fps: float = 25.0,
    batch_size: int = 256,
) -> EvalReport:
    """Macro-averaged MPJPE per horizon, with zero/constant-velocity baselines.

    Every window must carry enough target plus extended frames to cover the
    largest horizon.  The horizon-h value is the metric over the first h
    predicted frames.
    """
    if not windows:
        raise DataError("no evaluation windows")
    horizons = tuple(sorted(set(int(h) for h in horizons_frames)))
    if any(h < 1 for h in horizons):
        raise ConfigError(f"horizons must be positive frame counts, got {horizons_frames}")
    maxh = max(horizons)
    cfg = model.cfg

    by_action: dict[str, list[UnitWindow]] = {}
    for w in windows:
        if w.target.shape[0] + w.extended_future.shape[0] < maxh:
            raise DataError(
                f"window {w.action!r}@{w.start} has {w.target.shape[0] + w.extended_future.shape[0]} "
                f"future frames, horizon {maxh} needs more"
            )
        by_action.setdefault(w.action, []).append(w)

    sums: dict[str, dict[str, np.ndarray]] = {}
    sums_dn: dict[str, dict[str, np.ndarray]] = {}
    counts: dict[str, int] = {}
    for action in sorted(by_action):
        ws = by_action[action]
        acc = {s: np.zeros(len(horizons)) for s in EvalReport.SOURCES}
        acc_dn = {s: np.zeros(len(horizons)) for s in EvalReport.SOURCES}
        for lo in range(0, len(ws), batch_size):
            chunk = ws[lo : lo + batch_size]
            obs = np.stack([w.observed for w in chunk], axis=1)
            truth = np.stack(
                [np.concatenate([w.target, w.extended_future], axis=0)[:maxh] for w in chunk],
                axis=1,
            )
            if maxh <= cfg.l:
                pred, _ = predict_short_batch(obs, model, mode="infer")
                pred = pred.data[:maxh]
            else:
                pred = predict_long_batch(obs, model, horizon=maxh, mode="infer").data
            last = obs[-1]
            zero = np.broadcast_to(last, (maxh,) + last.shape).copy()
            steps = np.arange(1, maxh + 1).reshape(maxh, 1, 1, 1)
            const = last + steps * (last - obs[-2])
            preds = {"model": pred, "zero_velocity": zero, "constant_velocity": const}
            for source, p in preds.items():
                cum = _cumulative_mpjpe(p, truth)
                acc[source] += np.array([cum[h - 1].sum() for h in horizons])
                if stats_by_action is not None:
                    st = stats_by_action.get(action)
                    if st is None:
                        raise DataError(f"no normalization statistics supplied for action {action!r}")
                    cum_dn = _cumulative_mpjpe(denormalize(p, st), denormalize(truth, st))
                    acc_dn[source] += np.array([cum_dn[h - 1].sum() for h in horizons])
        sums[action] = acc
        sums_dn[action] = acc_dn
        counts[action] = len(ws)

    per_action = {
        action: {
            source: {h: float(sums[action][source][i] / counts[action]) for i, h in enumerate(horizons)}
            for source in EvalReport.SOURCES
        }
        for action in sums
    }
    per_action_denorm = None
    if stats_by_action is not None:
        per_action_denorm = {
            action: {
                source: {h: float(sums_dn[action][source][i] / counts[action]) for i, h in enumerate(horizons)}
                for source in EvalReport.SOURCES
            }
            for action in sums_dn
        }
    return EvalReport(
        horizons_frames=horizons,
        fps=fps,
        per_action=per_action,
        per_action_denorm=per_action_denorm,
        window_counts=counts,
    )
