"""Built-in gradient-check suite: every layer, then the full objective.

Each check wraps a deterministic scalar loss over a small parameter group
and compares reverse-mode gradients against central finite differences.
Loss surfaces are kept away from activation kinks so the comparison is
meaningful at the default step size.
"""

from __future__ import annotations

import numpy as np

from .dataio import SynthSpec, make_windows, normalize_action, synth_generate
from .losses import loss_current, loss_future, loss_past
from .model import ModelConfig, build_model, predict_long_batch
from .numerics.gradcheck import GradCheckReport, gradient_check
from .numerics.layers import (
    batchnorm_init,
    bn_dropout_act,
    forward_linear,
    lstm_forward,
    lstm_init,
)
from .numerics.rng import RngState, uniform_init
from .numerics.tensor import Tensor, relu, sigmoid, tabs, tanh, tmean, tsqrt
from .numerics.optim import ParamGroup


def _param(name: str, shape, rng: RngState, fan_in: int | None = None) -> Tensor:
    fan = fan_in if fan_in is not None else (shape[0] if shape else 1)
    return Tensor(uniform_init(tuple(shape), fan, rng.generator(f"check:{name}")), requires_grad=True)


def _check_linear() -> tuple[ParamGroup, object]:
    rng = RngState(101)
    x = rng.generator("check:x").uniform(-1.0, 1.0, size=(4, 6))
    w = _param("w", (6, 5), rng)
    b = _param("b", (5,), rng, fan_in=6)
    group = ParamGroup()
    group.add("w", w)
    group.add("b", b)

    def f():
        out = forward_linear(x, w, b)
        return tmean(out * out) + tmean(tanh(out))

    return group, f


def _check_elementwise() -> tuple[ParamGroup, object]:
    rng = RngState(102)
    u = rng.generator("check:w").uniform(-0.5, 0.5, size=(5, 4))
    w = Tensor(u + 0.75 * np.sign(u), requires_grad=True)  # |w| in (0.75, 1.25)
    m = rng.generator("check:m").uniform(-1.0, 1.0, size=(4, 3))
    group = ParamGroup()
    group.add("w", w)

    def f():
        y = w @ m
        smooth = tmean(sigmoid(y)) + tmean(tanh(y)) + tmean(y / 3.0)
        kinked = tmean(tabs(w)) + tmean(relu(w)) + tmean(tsqrt(tabs(w)))
        return smooth + kinked + tmean(w * w) - tmean(-w)

    return group, f


def _check_lstm() -> tuple[ParamGroup, object]:
    rng = RngState(103)
    seq = rng.generator("check:seq").uniform(-1.0, 1.0, size=(6, 3, 5))
    layers = lstm_init(3, 5, 8, rng, "check")
    group = ParamGroup()
    for i, layer in enumerate(layers):
        group.add(f"lstm.{i}.wx", layer.wx)
        group.add(f"lstm.{i}.wh", layer.wh)
        group.add(f"lstm.{i}.b", layer.b)

    def f():
        out = lstm_forward(seq, layers)
        return tmean(out * out) + tmean(tanh(out))

    return group, f


def _check_batchnorm() -> tuple[ParamGroup, object]:
    rng = RngState(104)
    x = Tensor(rng.generator("check:x").uniform(-2.0, 2.0, size=(5, 6)), requires_grad=True)
    bn = batchnorm_init(6)
    bn.scale.data = 1.0 + rng.generator("check:scale").uniform(-0.3, 0.3, size=6)
    bn.shift.data = rng.generator("check:shift").uniform(-0.3, 0.3, size=6)
    group = ParamGroup()
    group.add("x", x)
    group.add("scale", bn.scale)
    group.add("shift", bn.shift)

    def f():
        out = bn_dropout_act(x, bn, mode="train", drop_rate=0.0, rng=None, activation="tanh")
        return tmean(out * out)

    return group, f


def _tiny_model():
    spec = SynthSpec(joints=2, frames=80, seed=5, noise_std=0.01, name="check")
    seq, _ = normalize_action(synth_generate(spec))
    windows = make_windows(seq, k=50, l=10, extended=5, stride=9)[:2]
    obs = np.stack([w.observed for w in windows], axis=1)
    tgt = np.stack([w.target for w in windows], axis=1)
    ext = np.stack([w.extended_future for w in windows], axis=1)
    cfg = ModelConfig(joints=2, hidden=8, drop_rate=0.0, seed=11)
    model = build_model(cfg)
    return model, obs, tgt, ext


def _check_end_to_end() -> tuple[ParamGroup, object]:
    model, obs, tgt, ext = _tiny_model()
    group = model.param_group()
    future = (5,)

    def f():
        rollout = predict_long_batch(obs, model, horizon=15, mode="train")
        pred = rollout[:10]
        l_f, _ = loss_future(rollout[10:], ext, future)
        return loss_past(pred, tgt) + loss_current(pred, tgt) + l_f

    return group, f


def gradcheck_suite(end_to_end_coords: int = 4) -> list[tuple[str, GradCheckReport]]:
    """Run every check; a report per check, layer checks at 1e-4 tolerance."""
    results: list[tuple[str, GradCheckReport]] = []
    for name, builder in (
        ("linear", _check_linear),
        ("elementwise", _check_elementwise),
        ("lstm", _check_lstm),
        ("batchnorm", _check_batchnorm),
    ):
        group, f = builder()
        results.append((name, gradient_check(f, group, tolerance=1e-4)))
    group, f = _check_end_to_end()
    results.append(("end_to_end", gradient_check(f, group, tolerance=1e-3, max_coords=end_to_end_coords)))
    return results
