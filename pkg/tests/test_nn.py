"""Oracle and gradient checks for the neural building blocks.

The graph-attention and message-attention oracles below are direct, loop-based
transcriptions of the attention equations, independent of the library's fused
implementations.
"""

import numpy as np
import pytest

from bepal import autodiff as ad
from bepal import nn
from bepal.autodiff import ShapeError, Tape
from conftest import check_grads, leaky, numeric_grad

SLOPE = nn.LEAKY_SLOPE


# ------------------------------------------------------------------
# independent oracles


def gat_layer_oracle(feats, weights, attns, merge, slope=SLOPE):
    """Literal attention + aggregation over a star graph centered on node 0."""
    n = feats.shape[0]
    neighbors = {0: list(range(1, n))}
    for j in range(1, n):
        neighbors[j] = [0]
    head_outputs = []
    for w_mat, a_vec in zip(weights, attns):
        projected = feats @ w_mat.T

        def raw_score(i, j):
            return leaky(float(a_vec @ np.concatenate([projected[i], projected[j]])), slope)

        out = np.zeros((n, w_mat.shape[0]))
        for i in range(n):
            norm_set = [i] + neighbors[i]
            scores = np.array([raw_score(i, j) for j in norm_set])
            weights_ij = np.exp(scores) / np.exp(scores).sum()
            agg = sum(d * projected[j] for d, j in zip(weights_ij, norm_set))
            out[i] = leaky(agg, slope)
        head_outputs.append(out)
    return np.concatenate(head_outputs, axis=1) if merge == "concat" else head_outputs[0]


def message_attention_oracle(h, messages, wq, wk, wu, d_k):
    """Literal scaled-dot-product aggregation over the N message slots."""
    n = messages.shape[0]
    query = wq @ h
    logits = np.array([query @ (wk @ messages[j]) for j in range(n)]) / np.sqrt(d_k)
    alpha = np.exp(logits) / np.exp(logits).sum()
    combined = sum(alpha[j] * (wu @ messages[j]) for j in range(n))
    return combined, alpha


def _random_layer(rng, heads, in_dim, out_dim, merge):
    return nn.GatLayer.create(rng, heads, in_dim, out_dim, merge=merge)


# ------------------------------------------------------------------
# gat_attention


def test_identical_neighbors_give_uniform_attention(rng):
    layer = _random_layer(rng, 1, 4, 3, "single")
    f = rng.uniform(-1, 1, size=4)
    neighbors = ad.constant(np.tile(f, (3, 1)))
    delta = nn.gat_attention(layer, 0, ad.constant(f), neighbors)
    np.testing.assert_allclose(delta.data, np.full(4, 0.25), atol=1e-12)


def test_lone_node_attention_is_one(rng):
    layer = _random_layer(rng, 1, 4, 3, "single")
    delta = nn.gat_attention(layer, 0, ad.constant(rng.uniform(-1, 1, 4)), None)
    np.testing.assert_allclose(delta.data, [1.0])


def test_attention_matches_scripted_oracle():
    rng = np.random.default_rng(99)
    w = np.array([[0.3, -0.7]])
    a = np.array([0.5, -0.25])
    layer = nn.GatLayer([ad.parameter(w)], [ad.parameter(a)], "single")
    center = np.array([1.0, 0.5])
    neighbors = np.array([[0.2, -0.4], [-1.0, 0.8]])
    delta = nn.gat_attention(layer, 0, ad.constant(center), ad.constant(neighbors))

    stack = np.vstack([center, neighbors])
    projected = stack @ w.T
    scores = [
        leaky(float(a @ np.concatenate([projected[0], projected[j]])), SLOPE)
        for j in range(3)
    ]
    expected = np.exp(scores) / np.exp(scores).sum()
    np.testing.assert_allclose(delta.data, expected, atol=1e-12)
    assert delta.data.sum() == pytest.approx(1.0, abs=1e-10)


# ------------------------------------------------------------------
# gat_forward


def test_single_node_graph(rng):
    layer = _random_layer(rng, 2, 5, 3, "concat")
    feats = rng.uniform(-1, 1, size=(1, 5))
    out = nn.gat_forward(layer, ad.constant(feats), ())
    expected = gat_layer_oracle(feats, [w.data for w in layer.head_weights],
                                [a.data for a in layer.head_attn], "concat")
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_forward_matches_oracle_small_star():
    rng = np.random.default_rng(4)
    layer = _random_layer(rng, 3, 4, 2, "concat")
    feats = rng.uniform(-1, 1, size=(3, 4))
    out = nn.gat_forward(layer, ad.constant(feats), ((0, 1), (0, 2)))
    expected = gat_layer_oracle(feats, [w.data for w in layer.head_weights],
                                [a.data for a in layer.head_attn], "concat")
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_forward_matches_oracle_property():
    # stars up to 5 nodes, random parameters, 50 trials
    rng = np.random.default_rng(21)
    for trial in range(50):
        n = int(rng.integers(1, 6))
        heads = int(rng.integers(1, 4))
        merge = "concat" if heads > 1 or rng.random() < 0.5 else "single"
        layer = _random_layer(rng, heads, 3, 2, merge if heads > 1 else merge)
        feats = rng.uniform(-2, 2, size=(n, 3))
        out = nn.gat_forward(layer, ad.constant(feats), nn.star_edges(n))
        expected = gat_layer_oracle(feats, [w.data for w in layer.head_weights],
                                    [a.data for a in layer.head_attn], layer.merge)
        np.testing.assert_allclose(out.data, expected, atol=1e-10)


def test_center_only_equals_row_zero(rng):
    layer = _random_layer(rng, 3, 4, 2, "concat")
    feats = ad.constant(rng.uniform(-1, 1, size=(4, 4)))
    full = nn.gat_forward(layer, feats, nn.star_edges(4))
    center = nn.gat_forward_center(layer, feats)
    np.testing.assert_allclose(center.data, full.data[0], atol=1e-14)


def test_leaf_permutation_leaves_center_unchanged(rng):
    layer = _random_layer(rng, 2, 4, 3, "concat")
    feats = rng.uniform(-1, 1, size=(4, 4))
    base = nn.gat_forward(layer, ad.constant(feats), nn.star_edges(4)).data[0]
    permuted = feats[[0, 3, 1, 2]]
    swapped = nn.gat_forward(layer, ad.constant(permuted), nn.star_edges(4)).data[0]
    np.testing.assert_allclose(base, swapped, atol=1e-12)


def test_non_star_edges_rejected(rng):
    layer = _random_layer(rng, 1, 4, 3, "single")
    feats = ad.constant(rng.uniform(-1, 1, size=(3, 4)))
    with pytest.raises(ShapeError, match="star"):
        nn.gat_forward(layer, feats, ((0, 1), (1, 2)))


def test_gat_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    layer = _random_layer(rng, 2, 3, 2, "concat")
    feats = ad.parameter(rng.uniform(-1, 1, size=(4, 3)))
    tensors = [feats] + layer.head_weights + layer.head_attn
    check_grads(lambda: nn.gat_forward(layer, feats, nn.star_edges(4)), tensors,
                rtol=1e-5, atol=1e-7)
    check_grads(lambda: nn.gat_forward_center(layer, feats), tensors,
                rtol=1e-5, atol=1e-7)


# ------------------------------------------------------------------
# message attention


def _projections(rng, hidden_dim, d_k):
    wq = nn.Linear.create(rng, d_k, hidden_dim, bias=False)
    wk = nn.Linear.create(rng, d_k, hidden_dim, bias=False)
    wu = nn.Linear.create(rng, hidden_dim, hidden_dim, bias=False)
    return wq, wk, wu


def test_identical_keys_average_values(rng):
    wq, wk, wu = _projections(rng, 6, 4)
    h = ad.constant(rng.uniform(-1, 1, 6))
    message = rng.uniform(-1, 1, 6)
    messages = ad.constant(np.tile(message, (3, 1)))
    combined, alpha = nn.message_attention(h, messages, wq, wk, wu, 4)
    np.testing.assert_allclose(alpha, np.full(3, 1 / 3), atol=1e-12)
    np.testing.assert_allclose(combined.data, wu.weight.data @ message, atol=1e-12)


def test_all_zero_messages_give_zero(rng):
    wq, wk, wu = _projections(rng, 6, 4)
    h = ad.constant(rng.uniform(-1, 1, 6))
    combined, _ = nn.message_attention(h, ad.constant(np.zeros((4, 6))), wq, wk, wu, 4)
    np.testing.assert_array_equal(combined.data, np.zeros(6))


def test_matches_scripted_oracle():
    rng = np.random.default_rng(13)
    wq, wk, wu = _projections(rng, 5, 2)
    h = rng.uniform(-1, 1, 5)
    messages = rng.uniform(-1, 1, (3, 5))
    combined, alpha = nn.message_attention(
        ad.constant(h), ad.constant(messages), wq, wk, wu, 2
    )
    want_c, want_alpha = message_attention_oracle(
        h, messages, wq.weight.data, wk.weight.data, wu.weight.data, 2
    )
    np.testing.assert_allclose(alpha, want_alpha, atol=1e-12)
    np.testing.assert_allclose(combined.data, want_c, atol=1e-12)
    assert alpha.sum() == pytest.approx(1.0, abs=1e-10)


def test_dominant_key_selects_its_value(rng):
    wq, wk, wu = _projections(rng, 6, 4)
    h = rng.uniform(-1, 1, 6)
    query = wq.weight.data @ h
    # build one message whose key aligns with the query at a huge logit gap
    strong = np.linalg.lstsq(wk.weight.data, 50.0 * query / (query @ query), rcond=None)[0]
    messages = np.zeros((3, 6))
    messages[1] = strong
    combined, alpha = nn.message_attention(
        ad.constant(h), ad.constant(messages), wq, wk, wu, 4
    )
    logits = (messages @ wk.weight.data.T) @ query / 2.0
    assert logits.max() - np.partition(logits, -2)[-2] > 20
    np.testing.assert_allclose(combined.data, wu.weight.data @ strong, atol=1e-6)
    assert alpha[1] == pytest.approx(1.0, abs=1e-8)


def test_team_attention_matches_per_agent(rng):
    wq, wk, wu = _projections(rng, 6, 4)
    hiddens = rng.uniform(-1, 1, (3, 6))
    messages = rng.uniform(-1, 1, (3, 6))
    team, team_alpha = nn.message_attention_team(
        ad.constant(hiddens), ad.constant(messages), wq, wk, wu, 4
    )
    for i in range(3):
        single, alpha = nn.message_attention(
            ad.constant(hiddens[i]), ad.constant(messages), wq, wk, wu, 4
        )
        np.testing.assert_allclose(team.data[i], single.data, atol=1e-12)
        np.testing.assert_allclose(team_alpha[i], alpha, atol=1e-12)


def test_message_attention_gradients():
    rng = np.random.default_rng(17)
    wq, wk, wu = _projections(rng, 4, 3)
    h = ad.parameter(rng.uniform(-1, 1, 4))
    messages = ad.parameter(rng.uniform(-1, 1, (3, 4)))
    tensors = [h, messages, wq.weight, wk.weight, wu.weight]
    check_grads(lambda: nn.message_attention(h, messages, wq, wk, wu, 3)[0], tensors,
                rtol=1e-5, atol=1e-7)
    hiddens = ad.parameter(rng.uniform(-1, 1, (3, 4)))
    tensors = [hiddens, messages, wq.weight, wk.weight, wu.weight]
    check_grads(
        lambda: nn.message_attention_team(hiddens, messages, wq, wk, wu, 3)[0], tensors,
        rtol=1e-5, atol=1e-7,
    )


def test_wrong_slot_count_rejected(rng):
    wq, wk, wu = _projections(rng, 6, 4)
    with pytest.raises(ShapeError):
        nn.message_attention(ad.constant(np.ones(6)), ad.constant(np.ones(6)), wq, wk, wu, 4)


# ------------------------------------------------------------------
# lstm


def test_zero_parameters_zero_state(rng):
    cell = nn.LstmCell(
        ad.parameter(np.zeros((8, 2))), ad.parameter(np.zeros((8, 2))), ad.parameter(np.zeros(8))
    )
    h, s = cell(ad.constant(np.ones(2)), ad.constant(np.zeros(2)), ad.constant(np.zeros(2)))
    np.testing.assert_array_equal(h.data, np.zeros(2))
    np.testing.assert_array_equal(s.data, np.zeros(2))


def test_hidden_state_bounded(rng):
    cell = nn.LstmCell.create(rng, 6)
    h = ad.constant(np.zeros(6))
    s = ad.constant(np.zeros(6))
    for _ in range(5):
        h, s = cell(ad.constant(rng.uniform(-3, 3, 6)), h, s)
        assert (np.abs(h.data) <= 1.0).all()


def test_three_chained_steps_match_finite_differences():
    rng = np.random.default_rng(23)
    cell = nn.LstmCell.create(rng, 3)
    xs = [ad.parameter(rng.uniform(-1, 1, 3)) for _ in range(3)]
    tensors = xs + [cell.w_input, cell.w_hidden, cell.bias]

    def run():
        h = ad.constant(np.zeros(3))
        s = ad.constant(np.zeros(3))
        for x in xs:
            h, s = cell(x, h, s)
        return ad.reduce_sum(ad.mul(h, h))

    check_grads(run, tensors, rtol=1e-5, atol=1e-8)


def test_batch_matches_single(rng):
    cell = nn.LstmCell.create(rng, 5)
    xs = rng.uniform(-1, 1, (4, 5))
    hs = rng.uniform(-1, 1, (4, 5))
    ss = rng.uniform(-1, 1, (4, 5))
    h_b, s_b = cell.batch(ad.constant(xs), ad.constant(hs), ad.constant(ss))
    for i in range(4):
        h_i, s_i = cell(ad.constant(xs[i]), ad.constant(hs[i]), ad.constant(ss[i]))
        np.testing.assert_allclose(h_b.data[i], h_i.data, atol=1e-13)
        np.testing.assert_allclose(s_b.data[i], s_i.data, atol=1e-13)


def test_batch_gradients(rng):
    cell = nn.LstmCell.create(rng, 3)
    x = ad.parameter(rng.uniform(-1, 1, (2, 3)))
    h = ad.parameter(rng.uniform(-1, 1, (2, 3)))
    s = ad.parameter(rng.uniform(-1, 1, (2, 3)))
    tensors = [x, h, s, cell.w_input, cell.w_hidden, cell.bias]
    check_grads(lambda: ad.concat(list(cell.batch(x, h, s)), axis=1), tensors,
                rtol=1e-5, atol=1e-8)


def test_dimension_mismatch_rejected(rng):
    cell = nn.LstmCell.create(rng, 4)
    with pytest.raises(ShapeError):
        cell(ad.constant(np.zeros(3)), ad.constant(np.zeros(4)), ad.constant(np.zeros(4)))


# ------------------------------------------------------------------
# initialization


def test_same_seed_identical_parameters():
    a = nn.Linear.create(np.random.default_rng(42), 8, 6)
    b = nn.Linear.create(np.random.default_rng(42), 8, 6)
    assert (a.weight.data == b.weight.data).all()
    assert (a.bias.data == b.bias.data).all()


def test_fan_in_bound():
    w = nn.init_weight(np.random.default_rng(0), (50, 4), fan_in=4)
    assert (np.abs(w) <= 0.5).all()


def test_empirical_mean_near_zero():
    w = nn.init_weight(np.random.default_rng(1), (100, 100), fan_in=100)
    assert abs(w.mean()) < 0.01


def test_biases_start_at_zero(rng):
    layer = nn.Linear.create(rng, 7, 3)
    assert not layer.bias.data.any()
    cell = nn.LstmCell.create(rng, 4)
    assert not cell.bias.data.any()
