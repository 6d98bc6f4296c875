"""Gradient, shape, and determinism checks for the autodiff core."""

import numpy as np
import pytest

from bepal import autodiff as ad
from bepal.autodiff import (
    GradientError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
)
from conftest import check_grads, numeric_grad

TRIALS = 100


def _rand(rng, shape):
    return ad.parameter(rng.uniform(-2.0, 2.0, size=shape))


def _rand_safe(rng, shape, margin=1e-3):
    # keep entries away from the leaky-relu kink so finite differences hold
    data = rng.uniform(-2.0, 2.0, size=shape)
    data = np.where(np.abs(data) < margin, margin, data)
    return ad.parameter(data)


# ------------------------------------------------------------------
# trivial examples pinned by the contract


def test_matmul_identity():
    out = ad.matmul(ad.constant(np.eye(2)), ad.constant([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_concat_shape():
    out = ad.concat([ad.constant(np.ones((2, 3))), ad.constant(np.zeros((1, 3)))], axis=0)
    assert out.shape == (3, 3)


def test_grad_of_sum_of_squares():
    x = ad.parameter([1.0, 2.0])
    with Tape() as tape:
        tape.backward(ad.reduce_sum(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_softmax_symmetry():
    out = ad.softmax(ad.constant([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)


def test_leaky_relu_negative_slope():
    out = ad.leaky_relu(ad.constant(np.array(-1.0)), 0.01)
    assert out.item() == pytest.approx(-0.01)


def test_log_softmax_uniform():
    out = ad.log_softmax(ad.constant([2.0, 2.0, 2.0]))
    np.testing.assert_allclose(out.data, np.log(1.0 / 3.0) * np.ones(3), atol=1e-15)


def test_constant_loss_leaves_no_grads():
    x = ad.constant([1.0, 2.0])
    with Tape() as tape:
        loss = ad.reduce_sum(ad.mul(x, x))
        tape.backward(loss)
    assert x.grad is None or not x.grad.any()


def test_backward_requires_scalar():
    x = ad.parameter([1.0, 2.0])
    with Tape() as tape:
        y = ad.mul(x, x)
        with pytest.raises(GradientError):
            tape.backward(y)


def test_backward_twice_accumulates():
    x = ad.parameter([1.0, 3.0])
    with Tape() as tape:
        loss = ad.reduce_sum(ad.mul(x, x))
        tape.backward(loss)
        first = x.grad.copy()
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2.0 * first)


def test_mse_gradient_vs_finite_difference(rng):
    w = ad.parameter(rng.uniform(-1, 1, size=(3, 4)))
    x = ad.constant(rng.uniform(-1, 1, size=4))
    y = ad.constant(rng.uniform(-1, 1, size=3))
    check_grads(
        lambda: ad.reduce_mean(ad.mul(ad.sub(ad.matmul(w, x), y), ad.sub(ad.matmul(w, x), y))),
        [w],
    )


# ------------------------------------------------------------------
# finite-difference property suite, 100 random trials per op


def _op_cases(rng, trial):
    n = 2 + trial % 3
    m = 2 + (trial + 1) % 3
    yield "add", lambda a=_rand(rng, (n, m)), b=_rand(rng, (n, m)): ad.add(a, b)
    yield "add_scalar", lambda a=_rand(rng, ()), b=_rand(rng, (n,)): ad.add(a, b)
    yield "add_bias", lambda a=_rand(rng, (n, m)), b=_rand(rng, (m,)): ad.add(a, b)
    yield "sub", lambda a=_rand(rng, (n,)), b=_rand(rng, (n,)): ad.sub(a, b)
    yield "neg", lambda a=_rand(rng, (n, m)): ad.neg(a)
    yield "mul", lambda a=_rand(rng, (n, m)), b=_rand(rng, (n, m)): ad.mul(a, b)
    yield "mul_scalar", lambda a=_rand(rng, ()), b=_rand(rng, (n, m)): ad.mul(a, b)
    yield "matmul_22", lambda a=_rand(rng, (n, m)), b=_rand(rng, (m, n)): ad.matmul(a, b)
    yield "matmul_21", lambda a=_rand(rng, (n, m)), b=_rand(rng, (m,)): ad.matmul(a, b)
    yield "matmul_12", lambda a=_rand(rng, (n,)), b=_rand(rng, (n, m)): ad.matmul(a, b)
    yield "matmul_11", lambda a=_rand(rng, (n,)), b=_rand(rng, (n,)): ad.matmul(a, b)
    yield "concat", lambda a=_rand(rng, (n, m)), b=_rand(rng, (1, m)): ad.concat([a, b], 0)
    yield "narrow", lambda a=_rand(rng, (n, m)): ad.narrow(a, 1, 1, m - 1)
    yield "element", lambda a=_rand(rng, (n, m)): ad.element(a, (1, 1))
    yield "reshape", lambda a=_rand(rng, (n, m)): ad.reshape(a, (m * n,))
    yield "transpose", lambda a=_rand(rng, (n, m)): ad.transpose(a)
    yield "sum", lambda a=_rand(rng, (n, m)): ad.reduce_sum(a)
    yield "sum_axis", lambda a=_rand(rng, (n, m)): ad.reduce_sum(a, axis=0)
    yield "mean", lambda a=_rand(rng, (n, m)): ad.reduce_mean(a)
    yield "mean_axis", lambda a=_rand(rng, (n, m)): ad.reduce_mean(a, axis=1)
    yield "exp", lambda a=_rand(rng, (n,)): ad.exp(a)
    yield "leaky_relu", lambda a=_rand_safe(rng, (n, m)): ad.leaky_relu(a, 0.01)
    yield "sigmoid", lambda a=_rand(rng, (n,)): ad.sigmoid(a)
    yield "tanh", lambda a=_rand(rng, (n,)): ad.tanh(a)
    yield "softmax", lambda a=_rand(rng, (n, m)): ad.softmax(a, axis=1)
    yield "log_softmax", lambda a=_rand(rng, (n, m)): ad.log_softmax(a, axis=0)
    yield "linear_1d", lambda x=_rand(rng, (m,)), w=_rand(rng, (n, m)), b=_rand(rng, (n,)): ad.linear(x, w, b)
    yield "linear_2d", lambda x=_rand(rng, (n, m)), w=_rand(rng, (n, m)), b=_rand(rng, (n,)): ad.linear(x, w, b)
    yield "stack_rows", lambda a=_rand(rng, (m,)), b=_rand(rng, (m,)): ad.stack_rows([a, b])
    yield "sum_scalars", lambda a=_rand(rng, ()), b=_rand(rng, ()), c=_rand(rng, ()): ad.sum_scalars([a, b, c])
    yield "entropy", lambda a=_rand(rng, (n,)): ad.entropy_from_log_probs(ad.log_softmax(a))
    yield "entropy_rows", lambda a=_rand(rng, (n, m)): ad.entropy_rows(ad.log_softmax(a, axis=1))
    yield "pick", lambda a=_rand(rng, (n, m)): ad.pick(a, [trial % m] * n)


def test_every_op_matches_finite_differences():
    rng = np.random.default_rng(7)
    seen = set()
    for trial in range(TRIALS):
        for name, build in _op_cases(rng, trial):
            seen.add(name)
            tensors = [t for t in build.__defaults__ if isinstance(t, Tensor)]
            check_grads(build, tensors, rtol=1e-6, atol=1e-8, seed=trial)
    assert len(seen) >= 30


def test_softmax_rows_positive_and_normalized():
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = ad.constant(rng.uniform(-5, 5, size=(4, 6)))
        out = ad.softmax(x, axis=1).data
        assert (out > 0).all()
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        log_out = ad.log_softmax(x, axis=1).data
        np.testing.assert_allclose(np.exp(log_out), out, atol=1e-12)


def test_backward_deterministic():
    rng = np.random.default_rng(11)
    w = ad.parameter(rng.uniform(-1, 1, size=(6, 6)))
    x = ad.constant(rng.uniform(-1, 1, size=6))

    def run():
        w.grad = None
        with Tape() as tape:
            loss = ad.reduce_sum(ad.tanh(ad.matmul(w, ad.tanh(ad.matmul(w, x)))))
            tape.backward(loss)
        return w.grad.copy()

    first, second = run(), run()
    assert (first == second).all()


# ------------------------------------------------------------------
# shape and finiteness errors


def test_shape_errors_name_offender():
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 2))))
    with pytest.raises(ShapeError, match="concat"):
        ad.concat([ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 2)))], axis=0)


def test_softmax_empty_axis_rejected():
    with pytest.raises(ShapeError):
        ad.softmax(ad.constant(np.ones((0,))), axis=0)
    with pytest.raises(ShapeError):
        ad.log_softmax(ad.constant(np.array(1.0)), axis=0)


def test_non_finite_forward_is_hard_error():
    with pytest.raises(NonFiniteError):
        Tensor([np.nan, 1.0])
    big = ad.constant(np.full(3, 1e200))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        ad.mul(big, big)


def test_eval_mode_records_nothing():
    w = ad.parameter(np.ones((2, 2)))
    out = ad.matmul(w, ad.constant(np.ones(2)))
    assert not out.requires_grad
    with Tape() as tape:
        ad.matmul(ad.constant(np.ones((2, 2))), ad.constant(np.ones(2)))
        assert len(tape) == 0
        ad.matmul(w, ad.constant(np.ones(2)))
        assert len(tape) == 1
