"""Shared test helpers: finite-difference gradients and oracle utilities."""

from __future__ import annotations

import numpy as np
import pytest

from bepal import autodiff as ad


def numeric_grad(fn, tensors, h=1e-5):
    """Central finite differences of the scalar fn() w.r.t. each tensor entry."""
    grads = []
    for t in tensors:
        grad = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + h
            f_plus = fn()
            flat[k] = original - h
            f_minus = fn()
            flat[k] = original
            grad_flat[k] = (f_plus - f_minus) / (2.0 * h)
        grads.append(grad)
    return grads


def check_grads(build, tensors, rtol=1e-6, atol=1e-8, h=1e-5, seed=0):
    """Compare tape gradients of a random linear functional of build() to FD."""
    rng = np.random.default_rng(seed)
    probe = {}

    def scalar():
        out = build()
        if out.ndim == 0:
            return out
        if "w" not in probe:
            probe["w"] = ad.constant(rng.uniform(-1.0, 1.0, size=out.shape))
        return ad.reduce_sum(ad.mul(out, probe["w"]))

    for t in tensors:
        t.grad = None
    with ad.Tape() as tape:
        tape.backward(scalar())
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]
    numeric = numeric_grad(lambda: scalar().item(), tensors, h)
    for tensor, got, want in zip(tensors, analytic, numeric):
        np.testing.assert_allclose(
            got, want, rtol=rtol, atol=atol,
            err_msg=f"gradient mismatch for tensor of shape {tensor.shape}",
        )


def leaky(x, slope):
    return np.where(np.asarray(x) > 0, x, slope * np.asarray(x))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
