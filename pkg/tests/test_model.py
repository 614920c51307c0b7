"""Model construction, forecasting behavior, and container persistence."""

import numpy as np
import pytest

from pms.dataio import NormStats
from pms.errors import ConfigError, InsufficientHistoryError, LoadError, ShapeError, StatisticsError
from pms.model import (
    LSTM_LAYERS,
    ModelConfig,
    PmsModel,
    branch_forward,
    build_model,
    correct_velocity,
    gamma_schedule,
    load_model,
    model_from_bytes,
    model_to_bytes,
    predict_long,
    predict_long_batch,
    predict_segment,
    predict_short,
    predict_short_batch,
    save_model,
)
from pms.numerics.rng import RngState
from pms.numerics.tensor import Tensor, backward, tsum


def _tiny_cfg(**overrides):
    base = dict(joints=2, k=50, l=10, hidden=8, seed=3, drop_rate=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def _window(rng, frames=50, joints=2, batch=None):
    shape = (frames, joints, 3) if batch is None else (frames, batch, joints, 3)
    return rng.standard_normal(shape)


# ---- attenuation schedule --------------------------------------------------------


def test_gamma_schedule_is_a_geometric_ramp():
    g = gamma_schedule(0.8, 5)
    np.testing.assert_allclose(g, [1.0, 0.8, 0.64, 0.512, 0.4096], atol=1e-15)
    np.testing.assert_array_equal(gamma_schedule(1.0, 3), [1.0, 1.0, 1.0])
    with pytest.raises(ConfigError):
        gamma_schedule(0.0, 3)
    with pytest.raises(ConfigError):
        gamma_schedule(1.5, 3)


# ---- configuration ----------------------------------------------------------------


def test_model_config_fills_defaults():
    cfg = _tiny_cfg()
    assert cfg.scales == (10, 5, 2)
    assert cfg.alpha[10] == (0.1, 0.2, 0.3, 0.4)
    assert cfg.beta[2] == (0.2, 0.3, 0.5)
    assert cfg.combine == {10: pytest.approx(1 / 3), 5: pytest.approx(1 / 3), 2: pytest.approx(1 / 3)}
    for d in cfg.scales:
        n = -(-cfg.l // d) * d  # ceil(l / d) * d entries
        np.testing.assert_allclose(cfg.gamma[d], 0.8 ** np.arange(n), atol=1e-15)
    assert cfg.features == 6


def test_model_config_validation():
    with pytest.raises(ConfigError):
        _tiny_cfg(joints=0)
    with pytest.raises(ConfigError):
        _tiny_cfg(l=0)
    with pytest.raises(ConfigError):
        _tiny_cfg(hidden=0)
    with pytest.raises(ConfigError):
        _tiny_cfg(k=49)  # cannot hold 5 blocks at the largest interval
    with pytest.raises(ConfigError):
        _tiny_cfg(adjust_rounds=0)
    with pytest.raises(ConfigError):
        _tiny_cfg(increment_sign=0.5)
    with pytest.raises(ConfigError):
        _tiny_cfg(drop_rate=1.0)
    with pytest.raises(ConfigError):
        _tiny_cfg(activation="gelu")
    with pytest.raises(ConfigError):
        _tiny_cfg(alpha={10: (0.1, 0.2, 0.3, 0.4)})  # missing weights for 5 and 2
    with pytest.raises(ConfigError):
        _tiny_cfg(combine={10: 0.5, 5: 0.5})  # does not cover scale 2
    with pytest.raises(ConfigError):
        _tiny_cfg(combine={10: 0.5, 5: 0.4, 2: 0.2})  # not convex
    with pytest.raises(ConfigError):
        _tiny_cfg(gamma={d: np.array([1.0]) for d in (10, 5, 2)})  # too short
    with pytest.raises(ConfigError):
        _tiny_cfg(gamma={d: np.array([-1.0] * 10) for d in (10, 5, 2)})


# ---- construction -----------------------------------------------------------------


def test_build_model_creates_velocity_and_accel_branches_per_scale():
    model = build_model(_tiny_cfg())
    assert set(model.branches) == {(d, kind) for d in (10, 5, 2) for kind in ("v", "a")}
    without = build_model(_tiny_cfg(accel_correction=False))
    assert set(without.branches) == {(d, "v") for d in (10, 5, 2)}
    assert without.branch_kinds() == ("v",)


def test_build_model_is_seed_deterministic():
    a = build_model(_tiny_cfg(seed=11))
    b = build_model(_tiny_cfg(seed=11))
    c = build_model(_tiny_cfg(seed=12))
    for (name, holder, attr), (_, holder2, attr2) in zip(a.tensor_slots(), b.tensor_slots()):
        va, vb = getattr(holder, attr), getattr(holder2, attr2)
        va = va.data if isinstance(va, Tensor) else va
        vb = vb.data if isinstance(vb, Tensor) else vb
        assert np.array_equal(va, vb), name
    diff = False
    for (name, holder, attr), (_, holder3, attr3) in zip(a.tensor_slots(), c.tensor_slots()):
        va, vc = getattr(holder, attr), getattr(holder3, attr3)
        va = va.data if isinstance(va, Tensor) else va
        vc = vc.data if isinstance(vc, Tensor) else vc
        if not np.array_equal(va, vc):
            diff = True
    assert diff


def test_branch_has_three_lstm_layers_and_optional_biases():
    model = build_model(_tiny_cfg())
    branch = model.branches[(10, "v")]
    assert len(branch.lstm) == LSTM_LAYERS == 3
    assert branch.fc_in_b is not None and branch.bn is not None
    lean = build_model(_tiny_cfg(fc_bias=False, bn_relu=False))
    branch = lean.branches[(10, "v")]
    assert branch.fc_in_b is None and branch.bn is None


def test_param_group_covers_trainable_tensors_only():
    model = build_model(_tiny_cfg())
    group = model.param_group()
    names = group.names()
    assert any(name.endswith("bn.scale") for name in names)
    assert not any("running" in name for name in names)  # running stats are not trained
    per_branch = 2 + 9 + 2 + 2 + 2 + 2  # fc_in w/b, 3 lstm layers x 3, fc_mid, bn scale/shift, fc_out_a, fc_out_b
    assert len(group) == per_branch * 6  # 3 scales x (v, a)


# ---- increment application ---------------------------------------------------------


def test_predict_segment_applies_attenuated_increment():
    last = np.ones((3, 1, 3))
    inc = np.full((3, 1, 3), 2.0)
    gamma = np.array([1.0, 0.5, 0.25])
    out = predict_segment(last, inc, gamma, sign=-1.0)
    np.testing.assert_allclose(out[:, 0, 0], [1.0 - 2.0, 1.0 - 1.0, 1.0 - 0.5], atol=1e-15)
    out_plus = predict_segment(last, inc, gamma, sign=+1.0)
    np.testing.assert_allclose(out_plus[:, 0, 0], [3.0, 2.0, 1.5], atol=1e-15)


def test_predict_segment_validates_shapes():
    with pytest.raises(ShapeError):
        predict_segment(np.ones((3, 1, 3)), np.ones((2, 1, 3)), np.ones(3))
    with pytest.raises(ShapeError):
        predict_segment(np.ones((3, 1, 3)), np.ones((3, 1, 3)), np.ones(2))


def test_correct_velocity_is_an_elementwise_sum():
    a = np.array([[1.0, 2.0]])
    b = np.array([[0.5, -0.5]])
    np.testing.assert_array_equal(correct_velocity(a, b), [[1.5, 1.5]])
    with pytest.raises(ShapeError):
        correct_velocity(np.ones((2, 2)), np.ones((2, 3)))


# ---- branch forward -----------------------------------------------------------------


def test_branch_forward_shape_contract():
    cfg = _tiny_cfg()
    model = build_model(cfg)
    x = np.random.default_rng(0).standard_normal((5, 4, cfg.features))
    out = branch_forward(Tensor(x), model.branches[(10, "v")], cfg)
    assert out.shape == (5, 4, cfg.features)
    with pytest.raises(ShapeError):
        branch_forward(Tensor(x[:, :, :4]), model.branches[(10, "v")], cfg)
    with pytest.raises(ShapeError):
        branch_forward(Tensor(x[0]), model.branches[(10, "v")], cfg)


def test_branch_forward_train_mode_needs_two_windows_for_batch_norm():
    cfg = _tiny_cfg()
    model = build_model(cfg)
    x = np.random.default_rng(0).standard_normal((5, 1, cfg.features))
    with pytest.raises(StatisticsError):
        branch_forward(Tensor(x), model.branches[(10, "v")], cfg, mode="train", rng=RngState(0))


# ---- forecasting ----------------------------------------------------------------------


def test_predict_short_shapes_and_per_branch_outputs():
    cfg = _tiny_cfg()
    model = build_model(cfg)
    window = _window(np.random.default_rng(1))
    pred = predict_short(window, model)
    assert pred.frames.shape == (10, 2, 3)
    assert set(pred.per_branch) == {10, 5, 2}
    for d in (10, 5, 2):
        assert pred.per_branch[d].shape == (10, 2, 3)
    assert pred.model_id == cfg.label


def test_predict_short_batch_validates_window():
    cfg = _tiny_cfg()
    model = build_model(cfg)
    rng = np.random.default_rng(2)
    with pytest.raises(InsufficientHistoryError):
        predict_short_batch(_window(rng, frames=40, batch=2), model)
    with pytest.raises(ShapeError):
        predict_short_batch(_window(rng, frames=50, joints=3, batch=2), model)
    with pytest.raises(ValueError):
        predict_short_batch(_window(rng, batch=2), model, mode="training")


def test_zero_attenuation_repeats_each_branch_last_segment():
    # With every gamma zero the increments cannot move the anchor, so branch
    # delta tiles the newest delta observed frames across the horizon.
    cfg = _tiny_cfg(gamma={d: np.zeros(10) for d in (10, 5, 2)})
    model = build_model(cfg)
    window = _window(np.random.default_rng(3))
    pred = predict_short(window, model)
    for d in (10, 5, 2):
        reps = -(-cfg.l // d)
        tiled = np.tile(window[-d:], (reps, 1, 1))[: cfg.l]
        np.testing.assert_array_equal(pred.per_branch[d], tiled)
    blended = sum(cfg.combine[d] * pred.per_branch[d] for d in (10, 5, 2))
    np.testing.assert_allclose(pred.frames, blended, atol=1e-12, rtol=0)


def test_infer_mode_is_deterministic_even_with_dropout():
    cfg = _tiny_cfg(drop_rate=0.4)
    model = build_model(cfg)
    window = _window(np.random.default_rng(4))
    a = predict_short(window, model).frames
    b = predict_short(window, model).frames
    np.testing.assert_array_equal(a, b)


def test_long_rollout_prefix_equals_short_forecast():
    cfg = _tiny_cfg()
    model = build_model(cfg)
    window = _window(np.random.default_rng(5))
    short = predict_short(window, model).frames
    long = predict_long(window, model, horizon=25).frames
    assert long.shape == (25, 2, 3)
    np.testing.assert_array_equal(long[:10], short)


def test_long_rollout_slides_the_window_forward():
    cfg = _tiny_cfg()
    model = build_model(cfg)
    rng = np.random.default_rng(6)
    window = _window(rng, batch=3)
    out = predict_long_batch(window, model, horizon=25)
    assert out.data.shape == (25, 3, 2, 3)
    # the second chunk must equal a fresh short forecast from the slid window
    first = predict_short_batch(window, model)[0].data
    slid = np.concatenate([window[10:], first], axis=0)
    second = predict_short_batch(slid, model)[0].data
    np.testing.assert_allclose(out.data[10:20], second, atol=1e-12, rtol=0)


def test_long_rollout_truncates_to_requested_horizon():
    cfg = _tiny_cfg()
    model = build_model(cfg)
    window = _window(np.random.default_rng(7))
    out = predict_long(window, model, horizon=12).frames
    assert out.shape == (12, 2, 3)
    full = predict_long(window, model, horizon=20).frames
    np.testing.assert_array_equal(out, full[:12])
    with pytest.raises(ConfigError):
        predict_long(window, model, horizon=0)


def test_adjustment_rounds_change_the_blend():
    window = _window(np.random.default_rng(8))
    one = predict_short(window, build_model(_tiny_cfg(adjust_rounds=1))).frames
    two = predict_short(window, build_model(_tiny_cfg(adjust_rounds=2))).frames
    assert not np.array_equal(one, two)


def test_velocity_fusion_toggle_changes_the_input_path():
    window = _window(np.random.default_rng(9))
    fused = predict_short(window, build_model(_tiny_cfg())).frames
    raw = predict_short(window, build_model(_tiny_cfg(velocity_fusion=False))).frames
    assert not np.array_equal(fused, raw)


def test_train_mode_builds_a_differentiable_graph():
    cfg = _tiny_cfg()
    model = build_model(cfg)
    window = _window(np.random.default_rng(10), batch=2)
    pred, _ = predict_short_batch(window, model, mode="train", rng=RngState(0))
    backward(tsum(pred * pred))
    group = model.param_group()
    grads = group.gradients()
    moved = sum(1 for g in grads.values() if np.any(g != 0.0))
    assert moved > len(grads) * 0.9  # essentially every parameter participates


# ---- persistence ------------------------------------------------------------------------


def _stats():
    return NormStats(x_min=-1.0, x_max=2.0, y_min=-3.0, y_max=4.5, z_min=0.25, z_max=9.0)


def test_container_round_trip_is_bit_identical(tmp_path):
    model = build_model(_tiny_cfg(), norm_stats=_stats())
    blob = model_to_bytes(model)
    again = model_to_bytes(model_from_bytes(blob))
    assert blob == again

    path = tmp_path / "m.pms"
    save_model(model, path)
    loaded = load_model(path)
    assert model_to_bytes(loaded) == blob
    assert loaded.norm_stats == _stats()
    window = _window(np.random.default_rng(11))
    np.testing.assert_array_equal(
        predict_short(window, model).frames, predict_short(window, loaded).frames
    )


def test_container_preserves_every_config_field():
    cfg = _tiny_cfg(
        scales=(4, 2),
        anchor="start",
        adjust_rounds=2,
        increment_sign=1.0,
        drop_rate=0.25,
        activation="tanh",
        fc_bias=False,
        bn_relu=True,
        velocity_fusion=False,
        label="custom",
        k=20,
    )
    loaded = model_from_bytes(model_to_bytes(build_model(cfg))).cfg
    for name in (
        "joints", "k", "l", "hidden", "scales", "anchor", "alpha", "beta",
        "combine", "adjust_rounds", "increment_sign", "drop_rate", "activation",
        "fc_bias", "bn_relu", "accel_correction", "velocity_fusion", "bn_eps",
        "bn_momentum", "seed", "label",
    ):
        assert getattr(loaded, name) == getattr(cfg, name), name
    for d in cfg.scales:
        np.testing.assert_array_equal(loaded.gamma[d], cfg.gamma[d])


def test_container_rejects_corruption():
    blob = model_to_bytes(build_model(_tiny_cfg()))
    with pytest.raises(LoadError, match="magic"):
        model_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(LoadError, match="version"):
        model_from_bytes(blob[:4] + b"\x63\x00\x00\x00" + blob[8:])
    with pytest.raises(LoadError, match="truncated"):
        model_from_bytes(blob[: len(blob) // 2])
    with pytest.raises(LoadError, match="truncated"):
        model_from_bytes(blob[:6])
    # flipping one byte of a tensor name makes it unknown
    marker = blob.find(b"v.10.fc_in.w")
    assert marker > 0
    broken = blob[:marker] + b"q" + blob[marker + 1 :]
    with pytest.raises(LoadError):
        model_from_bytes(broken)


def test_container_rejects_missing_tensors():
    model = build_model(_tiny_cfg())
    blob = model_to_bytes(model)
    # chop the final tensor record off: find the last name marker and cut before its length prefix
    last = blob.rfind(b"v.5.lstm.2.wx")
    truncated = blob[: last - 8]
    with pytest.raises(LoadError):
        model_from_bytes(truncated)


def test_save_without_norm_stats_round_trips(tmp_path):
    model = build_model(_tiny_cfg())
    path = tmp_path / "bare.pms"
    save_model(model, path)
    assert load_model(path).norm_stats is None
