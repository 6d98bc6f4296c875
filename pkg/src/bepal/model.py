"""The shared agent: observation encoder, message aggregation, recurrent
belief-state update, actor/critic heads, and the training-only belief decoder.

All agents use one parameter set.  Per-agent state lives in ``AgentRuntime``;
the outgoing message is always the element-wise product of the new hidden
state and the sampled binary gate, so a silenced agent broadcasts zeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .gridworld import N_ACTIONS, OBS_FEATURES, ObservationGraph

__all__ = [
    "MOTION_FEATURES",
    "BepalParams",
    "AgentRuntime",
    "Beliefs",
    "AgentStep",
    "TeamStep",
    "encode_observation",
    "aggregate_messages",
    "decode_beliefs",
    "step_agent",
    "step_team",
    "team_values",
    "sample_index",
]

# predicted motion features per row: (row, col, drow, dcol)
MOTION_FEATURES = 4


@dataclass
class BepalParams:
    """All trainable parameters, shared by every agent."""

    n_agents: int
    feat_dim: int
    hidden: int
    d_k: int
    gat1: nn.GatLayer
    gat2: nn.GatLayer
    post_gat: nn.Linear
    msg_query: nn.Linear
    msg_key: nn.Linear
    msg_value: nn.Linear
    lstm: nn.LstmCell
    actor_move: nn.Linear
    actor_gate: nn.Linear
    critic: nn.Linear
    reward_head: nn.Linear
    motion_hidden: nn.Linear
    motion_out: nn.Linear

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        n_agents: int,
        feat_dim: int = OBS_FEATURES,
        hidden: int = 128,
        d_k: int = 16,
        gat_heads: int = 3,
        gat_head_out: int = 32,
        motion_hidden_dim: int = 64,
    ) -> "BepalParams":
        gat1 = nn.GatLayer.create(rng, gat_heads, feat_dim, gat_head_out, merge="concat")
        gat2 = nn.GatLayer.create(rng, 1, gat_heads * gat_head_out, hidden, merge="single")
        return cls(
            n_agents=n_agents,
            feat_dim=feat_dim,
            hidden=hidden,
            d_k=d_k,
            gat1=gat1,
            gat2=gat2,
            post_gat=nn.Linear.create(rng, hidden, hidden),
            msg_query=nn.Linear.create(rng, d_k, hidden, bias=False),
            msg_key=nn.Linear.create(rng, d_k, hidden, bias=False),
            msg_value=nn.Linear.create(rng, hidden, hidden, bias=False),
            lstm=nn.LstmCell.create(rng, hidden),
            actor_move=nn.Linear.create(rng, N_ACTIONS, hidden),
            actor_gate=nn.Linear.create(rng, 2, hidden),
            critic=nn.Linear.create(rng, 1, hidden),
            reward_head=nn.Linear.create(rng, n_agents, hidden),
            motion_hidden=nn.Linear.create(rng, motion_hidden_dim, hidden),
            motion_out=nn.Linear.create(rng, (n_agents + 1) * MOTION_FEATURES, motion_hidden_dim),
        )

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        named.update(self.gat1.parameters("gat1"))
        named.update(self.gat2.parameters("gat2"))
        named.update(self.post_gat.parameters("post_gat"))
        named.update(self.msg_query.parameters("msg_query"))
        named.update(self.msg_key.parameters("msg_key"))
        named.update(self.msg_value.parameters("msg_value"))
        named.update(self.lstm.parameters("lstm"))
        named.update(self.actor_move.parameters("actor_move"))
        named.update(self.actor_gate.parameters("actor_gate"))
        named.update(self.critic.parameters("critic"))
        named.update(self.reward_head.parameters("reward_head"))
        named.update(self.motion_hidden.parameters("motion_hidden"))
        named.update(self.motion_out.parameters("motion_out"))
        return named

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def zero_grads(self) -> None:
        ad.zero_grads(list(self.named_parameters().values()))

    def collect_grads(self) -> dict[str, np.ndarray]:
        return {
            name: t.grad for name, t in self.named_parameters().items() if t.grad is not None
        }


@dataclass
class AgentRuntime:
    """Per-agent recurrent state between steps of one episode."""

    h: Tensor
    s: Tensor
    message: Tensor  # outgoing broadcast, h * gate
    gate: int

    @classmethod
    def initial(cls, hidden: int) -> "AgentRuntime":
        return cls(
            h=ad.constant(np.zeros(hidden)),
            s=ad.constant(np.zeros(hidden)),
            message=ad.constant(np.zeros(hidden)),
            gate=0,
        )


@dataclass
class Beliefs:
    """Training-time predictions decoded from the hidden state."""

    reward: Tensor  # (N,) expected discounted future reward per agent
    motion: Tensor  # (N+1, 4) per-agent next position and direction, plus prey row


@dataclass
class AgentStep:
    """Everything one agent produces in one tick."""

    action: int
    gate: int
    value: Tensor  # scalar
    move_logprob: Tensor  # scalar, log pi(action)
    gate_logprob: Tensor  # scalar, log pi(gate)
    entropy: Tensor  # scalar, movement entropy + gate entropy
    move_probs: np.ndarray
    gate_probs: np.ndarray
    beliefs: Beliefs | None
    runtime: AgentRuntime


def encode_observation(params: BepalParams, graph: ObservationGraph) -> Tensor:
    """Two attention layers over the star graph, node-0 output, then affine."""
    features = ad.constant(graph.node_features)
    level1 = nn.gat_forward(params.gat1, features, graph.edges)
    center = nn.gat_forward_center(params.gat2, level1)
    return params.post_gat(center)


def aggregate_messages(params: BepalParams, hidden: Tensor, messages: Tensor) -> Tensor:
    if messages.shape != (params.n_agents, params.hidden):
        raise ad.ShapeError(
            f"expected {params.n_agents} message slots of width {params.hidden}, got {messages.shape}"
        )
    combined, _ = nn.message_attention(
        hidden, messages, params.msg_query, params.msg_key, params.msg_value, params.d_k
    )
    return combined


def decode_beliefs(params: BepalParams, hidden: Tensor) -> Beliefs:
    reward = params.reward_head(hidden)
    motion_flat = params.motion_out(ad.leaky_relu(params.motion_hidden(hidden), nn.LEAKY_SLOPE))
    motion = ad.reshape(motion_flat, (params.n_agents + 1, MOTION_FEATURES))
    return Beliefs(reward=reward, motion=motion)


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF sample; consumes exactly one uniform draw."""
    return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right").clip(0, len(probs) - 1))


def _head_sample(
    head: nn.Linear, hidden: Tensor, rng: np.random.Generator, forced: int | None, greedy: bool
) -> tuple[int, Tensor, Tensor, np.ndarray]:
    logp = ad.log_softmax(head(hidden), axis=0)
    probs = np.exp(logp.data)
    if forced is not None:
        choice = forced
    elif greedy:
        choice = int(np.argmax(probs))
    else:
        choice = sample_index(probs, rng)
    return choice, ad.element(logp, choice), ad.entropy_from_log_probs(logp), probs


def step_agent(
    params: BepalParams,
    runtime: AgentRuntime,
    graph: ObservationGraph,
    messages: Tensor,
    rng: np.random.Generator,
    *,
    with_beliefs: bool = True,
    greedy: bool = False,
    forced: tuple[int, int] | None = None,
) -> AgentStep:
    """One agent tick: encode, aggregate, recurrent update, act, decode.

    ``forced`` replays a logged (action, gate) pair instead of sampling; only
    sampling consumes randomness, so a forced step leaves ``rng`` untouched.
    """
    encoded = encode_observation(params, graph)
    combined = aggregate_messages(params, runtime.h, messages)
    h_new, s_new = params.lstm(ad.add(encoded, combined), runtime.h, runtime.s)

    action, move_logprob, move_entropy, move_probs = _head_sample(
        params.actor_move, h_new, rng, forced[0] if forced else None, greedy
    )
    gate, gate_logprob, gate_entropy, gate_probs = _head_sample(
        params.actor_gate, h_new, rng, forced[1] if forced else None, greedy
    )
    value = ad.element(params.critic(h_new), 0)
    beliefs = decode_beliefs(params, h_new) if with_beliefs else None
    outgoing = ad.mul(h_new, ad.constant(float(gate)))
    return AgentStep(
        action=action,
        gate=gate,
        value=value,
        move_logprob=move_logprob,
        gate_logprob=gate_logprob,
        entropy=ad.add(move_entropy, gate_entropy),
        move_probs=move_probs,
        gate_probs=gate_probs,
        beliefs=beliefs,
        runtime=AgentRuntime(h=h_new, s=s_new, message=outgoing, gate=gate),
    )


@dataclass
class TeamStep:
    """One tick for all N agents at once, on shared parameters.

    Row i of every field matches what step_agent would produce for agent i;
    batching exists so the per-step work on the shared weight matrices is a
    single matrix product instead of N.
    """

    actions: list[int]
    gates: list[int]
    values: Tensor  # (N,)
    move_logprobs: Tensor  # (N,) chosen-action log-probs
    gate_logprobs: Tensor  # (N,)
    entropies: Tensor  # (N,) movement + gate entropy per agent
    reward_beliefs: Tensor | None  # (N, N)
    motion_beliefs: Tensor | None  # (N, N+1, 4)
    h: Tensor  # (N, H)
    s: Tensor  # (N, H)
    messages: Tensor  # (N, H), rows zeroed by the gate


def team_values(
    params: BepalParams,
    h: Tensor,
    s: Tensor,
    inbox: Tensor,
    graphs: Sequence[ObservationGraph],
) -> np.ndarray:
    """Critic estimates for the state all agents would update into; no sampling."""
    encoded = ad.stack_rows([encode_observation(params, g) for g in graphs])
    combined, _ = nn.message_attention_team(
        h, inbox, params.msg_query, params.msg_key, params.msg_value, params.d_k
    )
    h_new, _ = params.lstm.batch(ad.add(encoded, combined), h, s)
    return params.critic(h_new).data.reshape(params.n_agents).copy()


def step_team(
    params: BepalParams,
    h: Tensor,
    s: Tensor,
    inbox: Tensor,
    graphs: Sequence[ObservationGraph],
    rng: np.random.Generator,
    *,
    with_beliefs: bool = True,
    greedy: bool = False,
    forced: Sequence[tuple[int, int]] | None = None,
) -> TeamStep:
    n = params.n_agents
    encoded = ad.stack_rows([encode_observation(params, g) for g in graphs])
    combined, _ = nn.message_attention_team(
        h, inbox, params.msg_query, params.msg_key, params.msg_value, params.d_k
    )
    h_new, s_new = params.lstm.batch(ad.add(encoded, combined), h, s)

    move_logp = ad.log_softmax(params.actor_move(h_new), axis=1)
    gate_logp = ad.log_softmax(params.actor_gate(h_new), axis=1)
    actions, gates = [], []
    for i in range(n):
        if forced is not None:
            actions.append(forced[i][0])
            gates.append(forced[i][1])
        elif greedy:
            actions.append(int(np.argmax(move_logp.data[i])))
            gates.append(int(np.argmax(gate_logp.data[i])))
        else:
            actions.append(sample_index(np.exp(move_logp.data[i]), rng))
            gates.append(sample_index(np.exp(gate_logp.data[i]), rng))
    reward_beliefs = motion_beliefs = None
    if with_beliefs:
        reward_beliefs = params.reward_head(h_new)
        motion_flat = params.motion_out(
            ad.leaky_relu(params.motion_hidden(h_new), nn.LEAKY_SLOPE)
        )
        motion_beliefs = ad.reshape(motion_flat, (n, params.n_agents + 1, MOTION_FEATURES))
    gate_mask = np.repeat(np.array(gates, dtype=np.float64)[:, None], params.hidden, axis=1)
    return TeamStep(
        actions=actions,
        gates=gates,
        values=ad.reshape(params.critic(h_new), (n,)),
        move_logprobs=ad.pick(move_logp, actions),
        gate_logprobs=ad.pick(gate_logp, gates),
        entropies=ad.add(ad.entropy_rows(move_logp), ad.entropy_rows(gate_logp)),
        reward_beliefs=reward_beliefs,
        motion_beliefs=motion_beliefs,
        h=h_new,
        s=s_new,
        messages=ad.mul(h_new, ad.constant(gate_mask)),
    )
