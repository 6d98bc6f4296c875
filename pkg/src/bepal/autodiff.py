"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy float64 array.  Operations executed while a
``Tape`` is active record themselves on that tape; ``Tape.backward`` replays
the records in exact reverse execution order and accumulates gradients into
``Tensor.grad``.  With no active tape, operations are plain numpy forwards
(evaluation mode).

Broadcasting is deliberately restricted: apart from scalar-with-tensor
elementwise ops and row-bias addition ((n, m) + (m,)), operand shapes must
match exactly.  Every forward result and every leaf gradient is checked for
NaN/Inf; a non-finite value is a hard error.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "GradientError",
    "ShapeError",
    "NonFiniteError",
    "constant",
    "parameter",
    "add",
    "sub",
    "neg",
    "mul",
    "matmul",
    "concat",
    "narrow",
    "element",
    "reshape",
    "transpose",
    "reduce_sum",
    "reduce_mean",
    "exp",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "softmax",
    "log_softmax",
    "linear",
    "stack_rows",
    "sum_scalars",
    "entropy_from_log_probs",
    "entropy_rows",
    "pick",
    "custom_op",
    "zero_grads",
    "active_tape",
]


class GradientError(RuntimeError):
    """Raised when backward is invoked on an invalid target."""


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward value or gradient contains NaN/Inf."""


_STATE = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_STATE, "tapes", None)
    if stack is None:
        stack = []
        _STATE.tapes = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor init")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar; all routing goes through the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager around a forward pass; ``backward`` walks the
    records in reverse execution order.  Calling ``backward`` twice without
    zeroing grads accumulates into existing gradients.
    """

    __slots__ = ("_records",)

    def __init__(self):
        # each record: (output tensor, parent tensors, vjp closure)
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape exit out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise GradientError(f"backward target must be scalar, got shape {loss.shape}")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        owned: set[int] = set()  # keys whose array we may mutate in place
        for out, parents, vjp in reversed(self._records):
            grad_out = pending.pop(id(out), None)
            if grad_out is None:
                continue
            owned.discard(id(out))
            out.grad = grad_out if out.grad is None else out.grad + grad_out
            for parent, grad_parent in zip(parents, vjp(grad_out)):
                if grad_parent is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    if key in owned:
                        pending[key] += grad_parent
                    else:
                        # first array may alias a vjp input; copy once, then mutate
                        pending[key] = pending[key] + grad_parent
                        owned.add(key)
                else:
                    pending[key] = grad_parent
                    holders[key] = parent
        # whatever is still pending never appeared as an op output: leaves
        for key, grad in pending.items():
            leaf = holders[key]
            _check_finite(grad, "gradient")
            if leaf.grad is not None:
                leaf.grad = leaf.grad + grad
            else:
                leaf.grad = grad if key in owned else grad.copy()


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_finite(arr: np.ndarray, what: str) -> None:
    # a non-finite entry always propagates into the sum (inf-inf gives nan)
    if arr.size and not math.isfinite(arr.sum()):
        raise NonFiniteError(f"non-finite values in {what}")


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable, op: str) -> Tensor:
    if data.size and not math.isfinite(data.sum()):
        raise NonFiniteError(f"non-finite values in output of {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tracked = False
    stack = _tape_stack()
    if stack:
        for p in parents:
            if p.requires_grad:
                tracked = True
                break
        if tracked:
            stack[-1]._records.append((out, parents, vjp))
    out.requires_grad = tracked
    return out


def custom_op(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, name: str) -> Tensor:
    """Record a fused operation with a hand-written vector-Jacobian product.

    ``vjp(grad_out)`` must return one gradient (or None) per parent, each
    matching the parent's shape.
    """
    return _make(np.asarray(data, dtype=np.float64), tuple(parents), vjp, name)


# ------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        def vjp(g):
            return g, g
    elif a.ndim == 0:
        def vjp(g):
            return g.sum(), g
    elif b.ndim == 0:
        def vjp(g):
            return g, g.sum()
    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        # row-bias addition
        def vjp(g):
            return g, g.sum(axis=0)
    else:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not conform")
    return _make(a.data + b.data, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        def vjp(g):
            return g, -g
    elif a.ndim == 0:
        def vjp(g):
            return g.sum(), -g
    elif b.ndim == 0:
        def vjp(g):
            return g, -g.sum()
    else:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not conform")
    return _make(a.data - b.data, (a, b), vjp, "sub")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        def vjp(g):
            return g * b.data, g * a.data
    elif a.ndim == 0:
        def vjp(g):
            return (g * b.data).sum(), g * a.data.reshape(())
    elif b.ndim == 0:
        def vjp(g):
            return g * b.data.reshape(()), (g * a.data).sum()
    else:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not conform")
    return _make(a.data * b.data, (a, b), vjp, "mul")


# ------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        def vjp(g):
            return g @ bd.T, ad.T @ g
    elif a.ndim == 2 and b.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        def vjp(g):
            return g[:, None] * bd[None, :], ad.T @ g
    elif a.ndim == 1 and b.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        def vjp(g):
            return bd @ g, ad[:, None] * g[None, :]
    elif a.ndim == 1 and b.ndim == 1:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        def vjp(g):
            return g * bd, g * ad
    else:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    return _make(ad @ bd, (a, b), vjp, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got shape {a.shape}")
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,), "transpose")


# ------------------------------------------------------------------
# shape surgery


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat: no tensors given")
    base = parts[0].shape
    for p in parts[1:]:
        if p.ndim != parts[0].ndim or any(
            s != t for k, (s, t) in enumerate(zip(p.shape, base)) if k != axis
        ):
            raise ShapeError(f"concat: shape {p.shape} incompatible with {base} on axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[k], offsets[k + 1]), axis=axis) for k in range(len(parts))
        )

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), vjp, "concat")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if axis >= a.ndim or start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow: [{start}:{start + length}) on axis {axis} of shape {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(a.data[index].copy(), (a,), vjp, "narrow")


def element(a: Tensor, index) -> Tensor:
    """Pick a single entry, returned as a 0-d scalar tensor."""
    if isinstance(index, int):
        index = (index,)
    index = tuple(index)
    if len(index) != a.ndim:
        raise ShapeError(f"element: index {index} for shape {a.shape}")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(np.asarray(a.data[index]), (a,), vjp, "element")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: {a.shape} to {shape}")
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape).copy(), (a,), vjp, "reshape")


# ------------------------------------------------------------------
# reductions


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        def vjp(g):
            return (np.full_like(a.data, float(g)),)
        return _make(np.asarray(a.data.sum()), (a,), vjp, "sum")
    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _make(a.data.sum(axis=axis), (a,), vjp, "sum")


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        scale = 1.0 / a.size
        def vjp(g):
            return (np.full_like(a.data, float(g) * scale),)
        return _make(np.asarray(a.data.mean()), (a,), vjp, "mean")
    scale = 1.0 / a.shape[axis]
    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g * scale, axis), a.shape).copy(),)
    return _make(a.data.mean(axis=axis), (a,), vjp, "mean")


# ------------------------------------------------------------------
# activations


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    factor = np.where(a.data > 0.0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape == () or a.shape[axis] == 0:
        raise ShapeError(f"softmax: empty axis {axis} of shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _make(out, (a,), vjp, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape == () or a.shape[axis] == 0:
        raise ShapeError(f"log_softmax: empty axis {axis} of shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)

    def vjp(g):
        return (g - g.sum(axis=axis, keepdims=True) * probs,)

    return _make(out, (a,), vjp, "log_softmax")


# ------------------------------------------------------------------
# fused affine map; saves tape records on the hot path


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``weight @ x (+ bias)`` for 1-d x, ``x @ weight.T (+ bias)`` for 2-d x."""
    wd = weight.data
    if x.ndim == 1:
        if x.shape[0] != wd.shape[1]:
            raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
        out = wd @ x.data
        if bias is not None:
            out = out + bias.data

        def vjp(g):
            grads = [wd.T @ g, g[:, None] * x.data[None, :]]
            if bias is not None:
                grads.append(g)
            return tuple(grads)

    elif x.ndim == 2:
        if x.shape[1] != wd.shape[1]:
            raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
        out = x.data @ wd.T
        if bias is not None:
            out = out + bias.data

        def vjp(g):
            grads = [g @ wd, g.T @ x.data]
            if bias is not None:
                grads.append(g.sum(axis=0))
            return tuple(grads)

    else:
        raise ShapeError(f"linear: unsupported input shape {x.shape}")
    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, vjp, "linear")


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix, one tensor per row."""
    width = rows[0].shape
    if len(width) != 1 or any(r.shape != width for r in rows):
        raise ShapeError(f"stack_rows: need equal-length vectors, got {[r.shape for r in rows]}")

    def vjp(g):
        return tuple(g[k] for k in range(len(rows)))

    return _make(np.stack([r.data for r in rows]), tuple(rows), vjp, "stack_rows")


def sum_scalars(terms: Sequence[Tensor]) -> Tensor:
    """Sum of 0-d tensors in list order, as a single record."""
    if not terms:
        raise ShapeError("sum_scalars: no terms")
    acc = 0.0
    for t in terms:
        if t.ndim != 0:
            raise ShapeError(f"sum_scalars: non-scalar term of shape {t.shape}")
        acc += t.data

    def vjp(g):
        return (g,) * len(terms)

    return _make(np.asarray(acc), tuple(terms), vjp, "sum_scalars")


def entropy_from_log_probs(log_probs: Tensor) -> Tensor:
    """Shannon entropy -sum(p * log p) of a log-probability vector."""
    if log_probs.ndim != 1:
        raise ShapeError(f"entropy: expected a vector, got {log_probs.shape}")
    probs = np.exp(log_probs.data)

    def vjp(g):
        return (-g * probs * (log_probs.data + 1.0),)

    return _make(np.asarray(-(probs * log_probs.data).sum()), (log_probs,), vjp, "entropy")


def entropy_rows(log_probs: Tensor) -> Tensor:
    """Row-wise Shannon entropy of a matrix of log-probability rows."""
    if log_probs.ndim != 2:
        raise ShapeError(f"entropy_rows: expected a matrix, got {log_probs.shape}")
    probs = np.exp(log_probs.data)

    def vjp(g):
        return (-g[:, None] * probs * (log_probs.data + 1.0),)

    return _make(-(probs * log_probs.data).sum(axis=1), (log_probs,), vjp, "entropy_rows")


def pick(matrix: Tensor, indices) -> Tensor:
    """out[i] = matrix[i, indices[i]]; one entry per row."""
    idx = np.asarray(indices, dtype=np.int64)
    if matrix.ndim != 2 or idx.shape != (matrix.shape[0],):
        raise ShapeError(f"pick: matrix {matrix.shape} with {idx.shape} indices")
    rows = np.arange(matrix.shape[0])

    def vjp(g):
        full = np.zeros_like(matrix.data)
        full[rows, idx] = g
        return (full,)

    return _make(matrix.data[rows, idx], (matrix,), vjp, "pick")
