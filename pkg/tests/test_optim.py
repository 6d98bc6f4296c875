"""RMSprop update-rule checks against hand-rolled recurrences."""

import numpy as np
import pytest

from bepal import autodiff as ad
from bepal.autodiff import NonFiniteError
from bepal.optim import RmspropState, rmsprop_step


def test_single_step_arithmetic():
    theta = ad.parameter(np.zeros(1))
    state = RmspropState(learning_rate=0.001, smoothing=0.97, epsilon=1e-8)
    rmsprop_step({"theta": theta}, {"theta": np.ones(1)}, state)
    np.testing.assert_allclose(state.v["theta"], [0.03])
    np.testing.assert_allclose(theta.data, [-0.001 / (np.sqrt(0.03) + 1e-8)])
    assert theta.data[0] == pytest.approx(-0.0057735, abs=1e-7)


def test_zero_gradient_decays_v_only():
    theta = ad.parameter([1.5])
    state = RmspropState(smoothing=0.9)
    state.v["theta"] = np.array([0.4])
    rmsprop_step({"theta": theta}, {"theta": np.zeros(1)}, state)
    np.testing.assert_allclose(theta.data, [1.5])
    np.testing.assert_allclose(state.v["theta"], [0.36])


def test_two_steps_match_scripted_recurrence():
    rng = np.random.default_rng(5)
    theta0 = rng.uniform(-1, 1, size=(3, 2))
    g1, g2 = rng.uniform(-1, 1, size=(2, 3, 2))
    lr, alpha, eps = 0.01, 0.9, 1e-8

    # scripted oracle
    v = np.zeros_like(theta0)
    theta = theta0.copy()
    for g in (g1, g2):
        v = alpha * v + (1 - alpha) * g * g
        theta = theta - lr * g / (np.sqrt(v) + eps)

    param = ad.parameter(theta0.copy())
    state = RmspropState(learning_rate=lr, smoothing=alpha, epsilon=eps)
    rmsprop_step({"w": param}, {"w": g1}, state)
    rmsprop_step({"w": param}, {"w": g2}, state)
    np.testing.assert_allclose(param.data, theta, atol=1e-15)
    np.testing.assert_allclose(state.v["w"], v, atol=1e-15)
    assert (state.v["w"] >= 0).all()


def test_non_finite_gradient_rejected_before_mutation():
    theta = ad.parameter([1.0])
    other = ad.parameter([2.0])
    state = RmspropState()
    grads = {"theta": np.array([np.inf]), "other": np.array([1.0])}
    with pytest.raises(NonFiniteError):
        rmsprop_step({"theta": theta, "other": other}, grads, state)
    np.testing.assert_array_equal(theta.data, [1.0])
    np.testing.assert_array_equal(other.data, [2.0])
    assert not state.v


def test_shape_mismatch_rejected():
    theta = ad.parameter([1.0, 2.0])
    with pytest.raises(ValueError):
        rmsprop_step({"theta": theta}, {"theta": np.ones(3)}, RmspropState())
