"""Adam update rule against the closed-form single-step oracle."""

import numpy as np
import pytest

from pms.errors import PoisonedUpdateError, ShapeError
from pms.numerics.optim import AdamConfig, ParamGroup, adam_step
from pms.numerics.tensor import Tensor


def _group_with(value):
    group = ParamGroup()
    group.add("w", Tensor(np.array(value, dtype=np.float64), requires_grad=True))
    return group


def test_adam_first_step_moves_by_lr_in_gradient_direction():
    # With bias correction the first update is -lr * g / (|g| + eps).
    group = _group_with([1.0, -2.0, 3.0])
    g = np.array([0.5, -1.0, 0.0])
    cfg = AdamConfig(learning_rate=0.1, epsilon=1e-8)
    adam_step(group, {"w": g}, cfg)
    expected = np.array([1.0, -2.0, 3.0]) - 0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(group["w"].data, expected, atol=1e-12)
    assert group.t == 1


def test_adam_two_steps_match_hand_rolled_recurrence():
    cfg = AdamConfig(learning_rate=0.05, beta1=0.9, beta2=0.999, epsilon=1e-8)
    group = _group_with([0.5])
    grads = [np.array([0.3]), np.array([-0.2])]

    theta = np.array([0.5])
    m = np.zeros(1)
    v = np.zeros(1)
    for t, g in enumerate(grads, start=1):
        adam_step(group, {"w": g}, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1 - 0.9**t)
        v_hat = v / (1 - 0.999**t)
        theta = theta - 0.05 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(group["w"].data, theta, atol=1e-15)


def test_adam_zero_learning_rate_is_a_no_op_on_values():
    group = _group_with([1.0, 2.0])
    before = group["w"].data.copy()
    adam_step(group, {"w": np.array([5.0, -5.0])}, AdamConfig(learning_rate=0.0))
    np.testing.assert_array_equal(group["w"].data, before)
    assert group.t == 1  # state still advances


def test_adam_missing_gradient_counts_as_zero():
    group = _group_with([1.0])
    adam_step(group, {}, AdamConfig(learning_rate=0.1))
    np.testing.assert_allclose(group["w"].data, [1.0], atol=1e-12)


def test_adam_nonfinite_gradient_poisons_whole_update():
    group = ParamGroup()
    group.add("a", Tensor(np.array([1.0]), requires_grad=True))
    group.add("b", Tensor(np.array([2.0]), requires_grad=True))
    with pytest.raises(PoisonedUpdateError):
        adam_step(group, {"a": np.array([1.0]), "b": np.array([np.nan])}, AdamConfig())
    # neither parameter may move and the step counter must not advance
    np.testing.assert_array_equal(group["a"].data, [1.0])
    np.testing.assert_array_equal(group["b"].data, [2.0])
    assert group.t == 0


def test_adam_rejects_shape_mismatch():
    group = _group_with([1.0, 2.0])
    with pytest.raises(ShapeError):
        adam_step(group, {"w": np.ones(3)}, AdamConfig())


def test_param_group_bookkeeping():
    group = ParamGroup()
    t = Tensor(np.ones(2), requires_grad=True)
    group.add("w", t)
    assert "w" in group and len(group) == 1 and group.names() == ["w"]
    with pytest.raises(ValueError):
        group.add("w", Tensor(np.ones(2), requires_grad=True))
    with pytest.raises(ValueError):
        group.add("frozen", Tensor(np.ones(2)))
    t.grad = np.array([1.0, 2.0])
    group.zero_grad()
    assert t.grad is None
    np.testing.assert_array_equal(group.gradients()["w"], np.zeros(2))


def test_adam_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        AdamConfig(beta2=-0.1)
    with pytest.raises(ValueError):
        AdamConfig(epsilon=0.0)
