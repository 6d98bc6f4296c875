"""Neural building blocks with explicit parameter ownership.

Linear layers, multi-head graph attention over star graphs, scaled
dot-product message attention, and a single LSTM cell.  All forwards are
deterministic functions of (parameters, inputs); parameters are plain
``Tensor`` leaves owned by the layer objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

__all__ = [
    "LEAKY_SLOPE",
    "Linear",
    "GatLayer",
    "LstmCell",
    "init_weight",
    "gat_attention",
    "gat_forward",
    "gat_forward_center",
    "message_attention",
    "message_attention_team",
    "star_edges",
]

# negative slope shared by every LeakyReLU in the system (configurable per layer)
LEAKY_SLOPE = 0.01


def init_weight(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Linear:
    """Affine map y = W x + b, with W of shape (out, in)."""

    weight: Tensor
    bias: Tensor | None = None

    @classmethod
    def create(cls, rng: np.random.Generator, out_dim: int, in_dim: int, bias: bool = True) -> "Linear":
        w = ad.parameter(init_weight(rng, (out_dim, in_dim), in_dim))
        b = ad.parameter(np.zeros(out_dim)) if bias else None
        return cls(w, b)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        named = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            named[f"{prefix}.bias"] = self.bias
        return named


def star_edges(n_nodes: int) -> tuple[tuple[int, int], ...]:
    return tuple((0, j) for j in range(1, n_nodes))


@dataclass
class GatLayer:
    """Multi-head graph attention over a star graph centered on node 0.

    Each head holds a projection weight (out, in) and an attention vector of
    length 2*out scoring concatenated (projected self, projected neighbor)
    pairs.  merge is "concat" (head outputs concatenated) or "single".
    """

    head_weights: list[Tensor]
    head_attn: list[Tensor]
    merge: str = "concat"
    slope: float = LEAKY_SLOPE

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        heads: int,
        in_dim: int,
        out_dim: int,
        merge: str = "concat",
        slope: float = LEAKY_SLOPE,
    ) -> "GatLayer":
        if merge not in ("concat", "single"):
            raise ValueError(f"unknown merge mode {merge!r}")
        if merge == "single" and heads != 1:
            raise ValueError("merge='single' requires exactly one head")
        weights = [ad.parameter(init_weight(rng, (out_dim, in_dim), in_dim)) for _ in range(heads)]
        attn = [ad.parameter(init_weight(rng, (2 * out_dim,), 2 * out_dim)) for _ in range(heads)]
        return cls(weights, attn, merge, slope)

    @property
    def heads(self) -> int:
        return len(self.head_weights)

    @property
    def in_dim(self) -> int:
        return self.head_weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        per_head = self.head_weights[0].shape[0]
        return per_head * self.heads if self.merge == "concat" else per_head

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for k in range(self.heads):
            named[f"{prefix}.head{k}.weight"] = self.head_weights[k]
            named[f"{prefix}.head{k}.attn"] = self.head_attn[k]
        return named


def _validate_star(n_nodes: int, edges) -> None:
    expected = set(star_edges(n_nodes))
    got = {tuple(e) for e in edges}
    if got != expected:
        raise ShapeError(f"graph is not a star on node 0: edges {sorted(got)} for {n_nodes} nodes")


def _head_scores(layer: GatLayer, head: int, features: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Project features and split the attention vector into the two score parts."""
    out_dim = layer.head_weights[head].shape[0]
    projected = ad.linear(features, layer.head_weights[head])
    a_self = ad.narrow(layer.head_attn[head], 0, 0, out_dim)
    a_other = ad.narrow(layer.head_attn[head], 0, out_dim, out_dim)
    return projected, ad.matmul(projected, a_self), ad.matmul(projected, a_other)


def gat_attention(layer: GatLayer, head: int, f_center: Tensor, neighbors: Tensor | None) -> Tensor:
    """Attention distribution of one head for a node over its normalization set.

    The normalization set is the node itself plus its neighbors; entry 0 of
    the result is the self coefficient.  ``neighbors`` is a (k, F) matrix or
    None for an isolated node.
    """
    center = ad.reshape(f_center, (1, f_center.shape[0]))
    if neighbors is None:
        stack = center
    else:
        stack = ad.concat([center, neighbors], axis=0)
    _, score_self, score_other = _head_scores(layer, head, stack)
    # raw score for (center, j) pairs: self part of the center + other part of j
    logits = ad.add(ad.element(score_self, 0), score_other)
    return ad.softmax(ad.leaky_relu(logits, layer.slope), axis=0)


def _softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _star_head_forward(x: np.ndarray, w: np.ndarray, a: np.ndarray, slope: float, leaves: bool):
    """One attention head over a star graph, with the cache its backward needs.

    Returns (output, cache); output is (n, out) with the leaf rows present
    only when ``leaves`` is set (otherwise just the center row's vector).
    """
    n = x.shape[0]
    out_dim = w.shape[0]
    proj = x @ w.T
    a_self, a_other = a[:out_dim], a[out_dim:]
    score_self = proj @ a_self
    score_other = proj @ a_other
    # center: normalization set is every node
    z0 = score_self[0] + score_other
    f0 = np.where(z0 > 0.0, 1.0, slope)
    delta0 = _softmax(z0 * f0)
    y0_pre = delta0 @ proj
    g0 = np.where(y0_pre > 0.0, 1.0, slope)
    cache = {"proj": proj, "z_factor0": f0, "delta0": delta0, "out_factor0": g0}
    if not leaves or n == 1:
        cache["n"] = n
        y0 = y0_pre * g0
        return (y0[None, :] if leaves else y0), cache
    # leaves: normalization set is {leaf, center}
    z_leaf = np.stack(
        [score_self[1:] + score_other[1:], score_self[1:] + score_other[0]], axis=1
    )
    f_leaf = np.where(z_leaf > 0.0, 1.0, slope)
    delta_leaf = _softmax(z_leaf * f_leaf, axis=1)
    y_leaf_pre = delta_leaf[:, 0:1] * proj[1:] + delta_leaf[:, 1:2] * proj[0]
    g_leaf = np.where(y_leaf_pre > 0.0, 1.0, slope)
    cache.update(n=n, z_factor_leaf=f_leaf, delta_leaf=delta_leaf, out_factor_leaf=g_leaf)
    out = np.empty((n, out_dim))
    out[0] = y0_pre * g0
    out[1:] = y_leaf_pre * g_leaf
    return out, cache


def _star_head_backward(grad, cache, x, w, a, need_dx: bool):
    """Gradients of one star head; grad is (n, out) or (out,) center-only."""
    proj = cache["proj"]
    delta0 = cache["delta0"]
    n = cache["n"]
    out_dim = w.shape[0]
    center_grad = grad if grad.ndim == 1 else grad[0]
    dy0_pre = center_grad * cache["out_factor0"]
    d_delta0 = proj @ dy0_pre
    d_proj = delta0[:, None] * dy0_pre[None, :]
    dz0 = (d_delta0 - (d_delta0 * delta0).sum()) * delta0 * cache["z_factor0"]
    d_score_self = np.zeros(n)
    d_score_other = dz0.copy()
    d_score_self[0] = dz0.sum()
    if grad.ndim == 2 and n > 1:
        delta_leaf = cache["delta_leaf"]
        dy_leaf = grad[1:] * cache["out_factor_leaf"]
        d_delta = np.stack([(proj[1:] * dy_leaf).sum(axis=1), dy_leaf @ proj[0]], axis=1)
        d_proj[1:] += delta_leaf[:, 0:1] * dy_leaf
        d_proj[0] += delta_leaf[:, 1] @ dy_leaf
        dz = (d_delta - (d_delta * delta_leaf).sum(axis=1, keepdims=True)) * delta_leaf
        dz *= cache["z_factor_leaf"]
        d_score_self[1:] += dz[:, 0] + dz[:, 1]
        d_score_other[1:] += dz[:, 0]
        d_score_other[0] += dz[:, 1].sum()
    a_self, a_other = a[:out_dim], a[out_dim:]
    da = np.concatenate([proj.T @ d_score_self, proj.T @ d_score_other])
    d_proj += d_score_self[:, None] * a_self[None, :]
    d_proj += d_score_other[:, None] * a_other[None, :]
    dw = d_proj.T @ x
    dx = d_proj @ w if need_dx else None
    return dx, dw, da


def _gat_fused(layer: GatLayer, features: Tensor, leaves: bool) -> Tensor:
    x = features.data
    outputs, caches = [], []
    for head in range(layer.heads):
        out, cache = _star_head_forward(
            x, layer.head_weights[head].data, layer.head_attn[head].data, layer.slope, leaves
        )
        outputs.append(out)
        caches.append(cache)
    merged = np.concatenate(outputs, axis=1 if leaves else 0)
    widths = [o.shape[-1] for o in outputs]
    offsets = np.cumsum([0] + widths)
    parents = [features]
    for head in range(layer.heads):
        parents += [layer.head_weights[head], layer.head_attn[head]]

    def vjp(g):
        need_dx = features.requires_grad
        dx_total = np.zeros_like(x) if need_dx else None
        grads = [dx_total]
        for head in range(layer.heads):
            head_grad = (
                g[:, offsets[head] : offsets[head + 1]] if leaves else g[offsets[head] : offsets[head + 1]]
            )
            dx, dw, da = _star_head_backward(
                head_grad,
                caches[head],
                x,
                layer.head_weights[head].data,
                layer.head_attn[head].data,
                need_dx,
            )
            if need_dx:
                dx_total += dx
            grads += [dw, da]
        return tuple(grads)

    return ad.custom_op(merged, parents, vjp, "gat_star")


def gat_forward(layer: GatLayer, features: Tensor, edges) -> Tensor:
    """Update every node feature of a star graph via attention aggregation.

    features is (n, F); returns (n, out_dim).  Node 0 aggregates over all
    nodes; each leaf aggregates over itself and the center.
    """
    _validate_star(features.shape[0], edges)
    return _gat_fused(layer, features, leaves=True)


def gat_forward_center(layer: GatLayer, features: Tensor) -> Tensor:
    """Node-0 output only; identical to row 0 of gat_forward on a star graph."""
    return _gat_fused(layer, features, leaves=False)


def message_attention(
    hidden: Tensor,
    messages: Tensor,
    w_query: Linear,
    w_key: Linear,
    w_value: Linear,
    d_k: int,
) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product aggregation of the N inbound messages.

    messages is (N, H) with zero rows for gated senders.  Projections carry
    no bias so a zero message contributes exactly zero value.  Returns the
    aggregated message and (for diagnostics) the attention weights over the
    N slots; gradients flow through the weights inside the fused op.
    """
    if messages.ndim != 2:
        raise ShapeError(f"messages must be (N, H), got {messages.shape}")
    if w_query.bias is not None or w_key.bias is not None or w_value.bias is not None:
        raise ValueError("message projections must be bias-free")
    h, m = hidden.data, messages.data
    wq, wk, wu = w_query.weight, w_key.weight, w_value.weight
    scale = 1.0 / np.sqrt(d_k)
    query = wq.data @ h
    keys = m @ wk.data.T
    values = m @ wu.data.T
    alpha = _softmax((keys @ query) * scale)
    combined = alpha @ values

    def vjp(g):
        d_alpha = values @ g
        d_values = alpha[:, None] * g[None, :]
        d_scaled = (d_alpha - (d_alpha * alpha).sum()) * alpha * scale
        d_keys = d_scaled[:, None] * query[None, :]
        d_query = keys.T @ d_scaled
        d_messages = d_keys @ wk.data + d_values @ wu.data
        return (
            wq.data.T @ d_query,
            d_messages,
            d_query[:, None] * h[None, :],
            d_keys.T @ m,
            d_values.T @ m,
        )

    combined_t = ad.custom_op(
        combined, (hidden, messages, wq, wk, wu), vjp, "message_attention"
    )
    return combined_t, alpha


def message_attention_team(
    hidden: Tensor,
    messages: Tensor,
    w_query: Linear,
    w_key: Linear,
    w_value: Linear,
    d_k: int,
) -> tuple[Tensor, np.ndarray]:
    """All receivers at once: (N, H) hidden states against the shared inbox.

    Row i of the result equals message_attention for agent i; the key/value
    projections of the inbox are computed once instead of per receiver.
    """
    if hidden.ndim != 2 or messages.shape != hidden.shape:
        raise ShapeError(f"team attention: hidden {hidden.shape} vs messages {messages.shape}")
    h, m = hidden.data, messages.data
    wq, wk, wu = w_query.weight, w_key.weight, w_value.weight
    scale = 1.0 / np.sqrt(d_k)
    queries = h @ wq.data.T  # (N, d_k)
    keys = m @ wk.data.T
    values = m @ wu.data.T
    alpha = _softmax((queries @ keys.T) * scale, axis=1)  # rows: receivers
    combined = alpha @ values

    def vjp(g):
        d_alpha = g @ values.T
        d_values = alpha.T @ g
        d_scaled = (d_alpha - (d_alpha * alpha).sum(axis=1, keepdims=True)) * alpha * scale
        d_queries = d_scaled @ keys
        d_keys = d_scaled.T @ queries
        d_messages = d_keys @ wk.data + d_values @ wu.data
        return (
            d_queries @ wq.data,
            d_messages,
            d_queries.T @ h,
            d_keys.T @ m,
            d_values.T @ m,
        )

    combined_t = ad.custom_op(
        combined, (hidden, messages, wq, wk, wu), vjp, "message_attention_team"
    )
    return combined_t, alpha


@dataclass
class LstmCell:
    """Single LSTM cell with input size equal to hidden size.

    Gate order inside the stacked weights is input, forget, candidate,
    output.  Forward is a fused tape op with a hand-written backward.
    """

    w_input: Tensor  # (4H, H) applied to x
    w_hidden: Tensor  # (4H, H) applied to h
    bias: Tensor  # (4H,)

    @classmethod
    def create(cls, rng: np.random.Generator, hidden: int) -> "LstmCell":
        return cls(
            ad.parameter(init_weight(rng, (4 * hidden, hidden), hidden)),
            ad.parameter(init_weight(rng, (4 * hidden, hidden), hidden)),
            ad.parameter(np.zeros(4 * hidden)),
        )

    @property
    def hidden(self) -> int:
        return self.w_hidden.shape[1]

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_input": self.w_input,
            f"{prefix}.w_hidden": self.w_hidden,
            f"{prefix}.bias": self.bias,
        }

    def __call__(self, x: Tensor, h: Tensor, s: Tensor) -> tuple[Tensor, Tensor]:
        hid = self.hidden
        if x.shape != (hid,) or h.shape != (hid,) or s.shape != (hid,):
            raise ShapeError(
                f"lstm: x {x.shape}, h {h.shape}, s {s.shape} must all be ({hid},)"
            )
        wx, wh, b = self.w_input, self.w_hidden, self.bias
        pre = wx.data @ x.data + wh.data @ h.data + b.data
        gi = 1.0 / (1.0 + np.exp(-pre[:hid]))
        gf = 1.0 / (1.0 + np.exp(-pre[hid : 2 * hid]))
        gc = np.tanh(pre[2 * hid : 3 * hid])
        go = 1.0 / (1.0 + np.exp(-pre[3 * hid :]))
        s_new = gf * s.data + gi * gc
        tanh_s = np.tanh(s_new)
        h_new = go * tanh_s

        def vjp(g):
            gh, gs = g[:hid], g[hid:]
            ds = gs + gh * go * (1.0 - tanh_s * tanh_s)
            d_pre = np.empty_like(pre)
            d_pre[:hid] = ds * gc * gi * (1.0 - gi)
            d_pre[hid : 2 * hid] = ds * s.data * gf * (1.0 - gf)
            d_pre[2 * hid : 3 * hid] = ds * gi * (1.0 - gc * gc)
            d_pre[3 * hid :] = gh * tanh_s * go * (1.0 - go)
            return (
                wx.data.T @ d_pre,
                wh.data.T @ d_pre,
                ds * gf,
                d_pre[:, None] * x.data[None, :],
                d_pre[:, None] * h.data[None, :],
                d_pre,
            )

        packed = ad.custom_op(
            np.concatenate([h_new, s_new]), (x, h, s, wx, wh, b), vjp, "lstm"
        )
        return ad.narrow(packed, 0, 0, hid), ad.narrow(packed, 0, hid, hid)

    def batch(self, x: Tensor, h: Tensor, s: Tensor) -> tuple[Tensor, Tensor]:
        """Row-parallel step: (N, H) inputs and states, shared weights."""
        hid = self.hidden
        n = x.shape[0]
        if x.shape != (n, hid) or h.shape != (n, hid) or s.shape != (n, hid):
            raise ShapeError(
                f"lstm batch: x {x.shape}, h {h.shape}, s {s.shape} must be (N, {hid})"
            )
        wx, wh, b = self.w_input, self.w_hidden, self.bias
        pre = x.data @ wx.data.T + h.data @ wh.data.T + b.data
        gi = 1.0 / (1.0 + np.exp(-pre[:, :hid]))
        gf = 1.0 / (1.0 + np.exp(-pre[:, hid : 2 * hid]))
        gc = np.tanh(pre[:, 2 * hid : 3 * hid])
        go = 1.0 / (1.0 + np.exp(-pre[:, 3 * hid :]))
        s_new = gf * s.data + gi * gc
        tanh_s = np.tanh(s_new)
        h_new = go * tanh_s

        def vjp(g):
            gh, gs = g[:, :hid], g[:, hid:]
            ds = gs + gh * go * (1.0 - tanh_s * tanh_s)
            d_pre = np.empty_like(pre)
            d_pre[:, :hid] = ds * gc * gi * (1.0 - gi)
            d_pre[:, hid : 2 * hid] = ds * s.data * gf * (1.0 - gf)
            d_pre[:, 2 * hid : 3 * hid] = ds * gi * (1.0 - gc * gc)
            d_pre[:, 3 * hid :] = gh * tanh_s * go * (1.0 - go)
            return (
                d_pre @ wx.data,
                d_pre @ wh.data,
                ds * gf,
                d_pre.T @ x.data,
                d_pre.T @ h.data,
                d_pre.sum(axis=0),
            )

        packed = ad.custom_op(
            np.concatenate([h_new, s_new], axis=1), (x, h, s, wx, wh, b), vjp, "lstm_batch"
        )
        return ad.narrow(packed, 1, 0, hid), ad.narrow(packed, 1, hid, hid)
