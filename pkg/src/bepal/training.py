"""Centralized training with decentralized execution.

One epoch collects a fixed number of episodes, accumulates gradients of the
per-episode total losses, and applies a single RMSprop step.  Ground-truth
targets for the auxiliary heads are built after each episode by a central
view of the environment; message passing between agents carries a one-step
delay, and step-0 inboxes are all zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gridworld import GridState, PredatorPreyEnv
from .model import BepalParams, step_team, team_values
from .optim import RmspropState, rmsprop_step

__all__ = [
    "TrainConfig",
    "EpisodeBatch",
    "LossBreakdown",
    "rollout_episode",
    "compute_returns",
    "build_targets",
    "compute_advantages",
    "compute_critic_targets",
    "compute_losses",
    "belief_mse",
    "train_epoch",
]


@dataclass
class TrainConfig:
    """All training hyperparameters.

    motion_weight defaults to 0.05 / n_agents when left as None; the other
    defaults follow the benchmark setup (discount 1 for episodic penalties).
    """

    gamma: float = 1.0
    critic_weight: float = 0.05
    motion_weight: float | None = None
    reward_weight: float = 0.5
    entropy_coef: float = 0.01
    learning_rate: float = 0.001
    smoothing: float = 0.97
    episodes_per_epoch: int = 16
    episodes_per_update: int | None = None  # None: one update per epoch
    epochs: int = 300
    grad_clip: float | None = None
    # step-cap endings bootstrap the critic from the next state's value; only
    # a genuinely finished game anchors the recursion at zero
    bootstrap_on_timeout: bool = True
    no_motion: bool = False
    no_reward: bool = False
    no_aux: bool = False

    def __post_init__(self):
        for name in ("critic_weight", "reward_weight", "entropy_coef"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.motion_weight is not None and self.motion_weight < 0:
            raise ValueError("motion_weight must be >= 0")

    def resolved_motion_weight(self, n_agents: int) -> float:
        return 0.05 / n_agents if self.motion_weight is None else self.motion_weight

    @property
    def use_motion(self) -> bool:
        return not (self.no_aux or self.no_motion)

    @property
    def use_reward(self) -> bool:
        return not (self.no_aux or self.no_reward)


@dataclass
class EpisodeBatch:
    """Everything recorded during one episode, for all agents.

    Tensor-valued fields hold one row per agent per step and stay attached to
    the tape that was active during the rollout; targets are filled in
    afterwards by ``build_targets``.
    """

    n_agents: int
    map_size: int
    env_seed: int
    episode_id: int
    length: int = 0
    rewards: np.ndarray | None = None  # (T, N)
    actions: np.ndarray | None = None  # (T, N) ints
    gates: np.ndarray | None = None  # (T, N) ints
    positions: np.ndarray | None = None  # (T+1, N, 2) ints
    reached: np.ndarray | None = None  # (T+1, N) bools
    prey: tuple[int, int] = (0, 0)
    obstacles: tuple[tuple[int, int], ...] = ()
    states: list[GridState] = field(default_factory=list)  # T+1 snapshots
    move_logps: list[Tensor] = field(default_factory=list)  # each (N,)
    gate_logps: list[Tensor] = field(default_factory=list)  # each (N,)
    values: list[Tensor] = field(default_factory=list)  # each (N,)
    entropies: list[Tensor] = field(default_factory=list)  # each (N,)
    reward_beliefs: list[Tensor] | None = None  # each (N, N)
    motion_beliefs: list[Tensor] | None = None  # each (N, N+1, 4)
    motion_targets: np.ndarray | None = None  # (T, N+1, 4)
    reward_targets: np.ndarray | None = None  # (T, N)
    terminal_values: np.ndarray | None = None  # (N,) critic bootstrap at a step-cap ending

    @property
    def completed(self) -> bool:
        return bool(self.reached[-1].all()) if self.reached is not None else True

    def agent_return(self, agent: int, gamma: float = 1.0) -> float:
        if self.length == 0:
            return 0.0
        return float(compute_returns(self.rewards[:, agent], gamma)[0])


def rollout_episode(
    params: BepalParams,
    env: PredatorPreyEnv,
    rng: np.random.Generator,
    *,
    env_seed: int,
    with_beliefs: bool = True,
    greedy: bool = False,
    forced_actions: Sequence[Sequence[tuple[int, int]]] | None = None,
    timeout_value_bootstrap: bool = False,
) -> EpisodeBatch:
    """Run one episode with all agents acting on the shared parameters.

    Messages received at step t are exactly those emitted at step t-1.
    ``forced_actions[t][i]`` replays logged (move, gate) pairs, which keeps
    the episode identical while parameters change infinitesimally (used by
    the gradient checks).  ``timeout_value_bootstrap`` records the critic's
    estimate of the state following a step-cap ending (gradient-free).
    """
    cfg = env.config
    n = cfg.n_agents
    state = env.reset(env_seed)
    batch = EpisodeBatch(
        n_agents=n,
        map_size=cfg.map_size,
        env_seed=env_seed,
        episode_id=state.episode_id,
        prey=state.prey_position,
        obstacles=tuple(sorted(state.obstacles)),
        reward_beliefs=[] if with_beliefs else None,
        motion_beliefs=[] if with_beliefs else None,
    )
    batch.states.append(state)
    hidden = ad.constant(np.zeros((n, params.hidden)))
    cell = ad.constant(np.zeros((n, params.hidden)))
    inbox = ad.constant(np.zeros((n, params.hidden)))
    rewards, actions, gates = [], [], []
    while not state.all_reached and state.step_count < cfg.max_steps:
        t = state.step_count
        graphs = [env.observe(state, i) for i in range(n)]
        team = step_team(
            params,
            hidden,
            cell,
            inbox,
            graphs,
            rng,
            with_beliefs=with_beliefs,
            greedy=greedy,
            forced=forced_actions[t] if forced_actions is not None else None,
        )
        state, result = env.step(state, team.actions)
        batch.states.append(state)
        rewards.append(result.rewards)
        actions.append(team.actions)
        gates.append(team.gates)
        batch.move_logps.append(team.move_logprobs)
        batch.gate_logps.append(team.gate_logprobs)
        batch.values.append(team.values)
        batch.entropies.append(team.entropies)
        if with_beliefs:
            batch.reward_beliefs.append(team.reward_beliefs)
            batch.motion_beliefs.append(team.motion_beliefs)
        hidden, cell, inbox = team.h, team.s, team.messages
        if result.done:
            break
    if timeout_value_bootstrap and rewards and not state.all_reached:
        # value of the state the cap interrupted; a throwaway tape keeps the
        # extra forward off the training graph
        graphs = [env.observe(state, i) for i in range(n)]
        with ad.Tape():
            batch.terminal_values = team_values(params, hidden, cell, inbox, graphs)
    batch.length = len(rewards)
    batch.rewards = np.array(rewards, dtype=np.float64).reshape(batch.length, n)
    batch.actions = np.array(actions, dtype=np.int64).reshape(batch.length, n)
    batch.gates = np.array(gates, dtype=np.int64).reshape(batch.length, n)
    batch.positions = np.array(
        [s.agent_positions for s in batch.states], dtype=np.int64
    ).reshape(batch.length + 1, n, 2)
    batch.reached = np.array([s.reached for s in batch.states], dtype=bool).reshape(
        batch.length + 1, n
    )
    return batch


def compute_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Return-to-go R^t = sum_{tau >= t} gamma^(tau - t) * r^tau."""
    out = np.zeros(len(rewards), dtype=np.float64)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = float(rewards[t]) + gamma * acc
        out[t] = acc
    return out


def build_targets(
    env: PredatorPreyEnv, batch: EpisodeBatch, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Shared ground-truth targets for the belief heads.

    Motion target at step t is the env's motion matrix for the transition
    (t, t+1); the final step keeps its positions but zeroes the direction
    columns, since the game is over and nothing moves afterwards.  The reward
    target at step t is every agent's return-to-go, identical for all
    predicting agents.
    """
    t_steps, n = batch.length, batch.n_agents
    motion = np.zeros((t_steps, n + 1, 4), dtype=np.float64)
    for t in range(t_steps):
        motion[t], _ = env.ground_truth(batch.states[t], batch.states[t + 1])
    if t_steps:
        motion[-1, :, 2:] = 0.0
    reward = np.zeros((t_steps, n), dtype=np.float64)
    for j in range(n):
        reward[:, j] = compute_returns(batch.rewards[:, j], gamma)
    return motion, reward


def _final_value(batch: EpisodeBatch) -> np.ndarray:
    """V for the state after the last step: 0 at a true ending, the recorded
    critic estimate when the step cap interrupted the game."""
    if batch.terminal_values is not None:
        return batch.terminal_values
    return np.zeros(batch.n_agents)


def compute_critic_targets(batch: EpisodeBatch, gamma: float) -> np.ndarray:
    """Bootstrapped regression targets r^t + gamma*V^{t+1}."""
    t_steps, n = batch.length, batch.n_agents
    targets = np.zeros((t_steps, n), dtype=np.float64)
    for t in range(t_steps):
        v_next = batch.values[t + 1].data if t + 1 < t_steps else _final_value(batch)
        targets[t] = batch.rewards[t] + gamma * v_next
    return targets


def compute_advantages(batch: EpisodeBatch, gamma: float) -> np.ndarray:
    """One-step TD advantage r^t + gamma*V^{t+1} - V^t."""
    t_steps, n = batch.length, batch.n_agents
    adv = np.zeros((t_steps, n), dtype=np.float64)
    for t in range(t_steps):
        v_next = batch.values[t + 1].data if t + 1 < t_steps else _final_value(batch)
        adv[t] = batch.rewards[t] + gamma * v_next - batch.values[t].data
    return adv


@dataclass
class LossBreakdown:
    """Per-agent-mean loss terms; total applies the configured weights.

    total = actor + critic_weight*critic + motion_weight*aux_motion
          + reward_weight*aux_reward - entropy_coef*entropy,
    with ablated aux terms exactly zero.  ``loss`` is the differentiable
    scalar behind ``total``.
    """

    actor: float = 0.0
    critic: float = 0.0
    aux_motion: float = 0.0
    aux_reward: float = 0.0
    entropy: float = 0.0
    total: float = 0.0
    loss: Tensor | None = None


def _policy_step_term(move_logp: Tensor, gate_logp: Tensor, coeff: np.ndarray) -> Tensor:
    """sum_i (log pi_move_i + log pi_gate_i) * coeff_i, coefficients constant."""
    data = np.asarray(((move_logp.data + gate_logp.data) * coeff).sum())

    def vjp(g):
        return g * coeff, g * coeff

    return ad.custom_op(data, (move_logp, gate_logp), vjp, "policy_step_term")


def _td_step_term(targets: np.ndarray, values: Tensor, mask: np.ndarray) -> Tensor:
    """sum_i mask_i * (target_i - V_i)^2 regressing V onto the fixed target.

    The bootstrapped target r + gamma*V' is a constant: the critic is fit to
    it rather than the two estimates being pulled toward each other.
    """
    delta = targets - values.data

    def vjp(g):
        return (-2.0 * g * mask * delta,)

    return ad.custom_op(np.asarray((mask * delta * delta).sum()), (values,), vjp, "td_step_term")


def _mse_step_term(beliefs: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """sum_i mask_i * mean((beliefs_i - target)^2), the target shared by all agents."""
    diff = beliefs.data - target[None]
    per_entry = 1.0 / target.size
    flat_sq = (diff * diff).reshape(beliefs.shape[0], -1)
    mask_shape = (slice(None),) + (None,) * (beliefs.ndim - 1)

    def vjp(g):
        return (g * 2.0 * per_entry * mask[mask_shape] * diff,)

    return ad.custom_op(
        np.asarray((mask * flat_sq.sum(axis=1) * per_entry).sum()), (beliefs,), vjp, "mse_step_term"
    )


def compute_losses(
    batch: EpisodeBatch,
    cfg: TrainConfig,
    *,
    advantages: np.ndarray | None = None,
    critic_targets: np.ndarray | None = None,
    agent_subset: Sequence[int] | None = None,
    scale_by_agents: bool = True,
) -> LossBreakdown:
    """Combined actor-critic and auxiliary loss over one episode.

    The TD advantage multiplying the log-probabilities and the critic's
    bootstrapped target are both constants (no gradient flows through them).
    ``advantages`` and ``critic_targets`` may be supplied externally, e.g.
    frozen base-run values for gradient checking.  ``agent_subset`` restricts
    the summed terms to the given agents (diagnostics); scaling by 1/N is
    unconditional unless disabled.
    """
    n = batch.n_agents
    mask = np.zeros(n) if agent_subset is not None else np.ones(n)
    if agent_subset is not None:
        mask[list(agent_subset)] = 1.0
    if batch.length == 0 or not mask.any():
        return LossBreakdown(loss=ad.constant(0.0))
    if advantages is None:
        advantages = compute_advantages(batch, cfg.gamma)
    if critic_targets is None:
        critic_targets = compute_critic_targets(batch, cfg.gamma)
    use_motion = cfg.use_motion and batch.motion_beliefs is not None
    use_reward = cfg.use_reward and batch.reward_beliefs is not None
    if use_motion and batch.motion_targets is None:
        raise ValueError("targets must be built before computing losses")
    if use_reward and batch.reward_targets is None:
        raise ValueError("targets must be built before computing losses")

    mask_t = ad.constant(mask)
    actor_terms, critic_terms, entropy_terms = [], [], []
    motion_terms, reward_terms = [], []
    for t in range(batch.length):
        actor_terms.append(
            _policy_step_term(batch.move_logps[t], batch.gate_logps[t], -advantages[t] * mask)
        )
        critic_terms.append(_td_step_term(critic_targets[t], batch.values[t], mask))
        entropy_terms.append(ad.matmul(batch.entropies[t], mask_t))
        if use_motion:
            motion_terms.append(
                _mse_step_term(batch.motion_beliefs[t], batch.motion_targets[t], mask)
            )
        if use_reward:
            reward_terms.append(
                _mse_step_term(batch.reward_beliefs[t], batch.reward_targets[t], mask)
            )

    inv_n = ad.constant(1.0 / n if scale_by_agents else 1.0)
    actor = ad.mul(ad.sum_scalars(actor_terms), inv_n)
    critic = ad.mul(ad.sum_scalars(critic_terms), inv_n)
    entropy = ad.mul(ad.sum_scalars(entropy_terms), inv_n)
    zero = ad.constant(0.0)
    aux_motion = ad.mul(ad.sum_scalars(motion_terms), inv_n) if motion_terms else zero
    aux_reward = ad.mul(ad.sum_scalars(reward_terms), inv_n) if reward_terms else zero

    # fixed accumulation order so ablated totals reconstruct bit-identically
    total = actor
    total = ad.add(total, ad.mul(critic, ad.constant(cfg.critic_weight)))
    total = ad.sub(total, ad.mul(entropy, ad.constant(cfg.entropy_coef)))
    if use_motion:
        total = ad.add(total, ad.mul(aux_motion, ad.constant(cfg.resolved_motion_weight(n))))
    if use_reward:
        total = ad.add(total, ad.mul(aux_reward, ad.constant(cfg.reward_weight)))
    return LossBreakdown(
        actor=actor.item(),
        critic=critic.item(),
        aux_motion=aux_motion.item(),
        aux_reward=aux_reward.item(),
        entropy=entropy.item(),
        total=total.item(),
        loss=total,
    )


def belief_mse(batch: EpisodeBatch) -> tuple[float, float] | None:
    """Measured per-step per-agent MSE of both belief heads (numpy only)."""
    if batch.motion_beliefs is None or batch.length == 0:
        return None
    if batch.motion_targets is None or batch.reward_targets is None:
        raise ValueError("targets must be built before measuring belief error")
    motion_total, reward_total = 0.0, 0.0
    for t in range(batch.length):
        motion_total += float(
            np.mean((batch.motion_beliefs[t].data - batch.motion_targets[t][None]) ** 2)
        )
        reward_total += float(
            np.mean((batch.reward_beliefs[t].data - batch.reward_targets[t][None]) ** 2)
        )
    return motion_total / batch.length, reward_total / batch.length


def _clip_grads(grads: dict[str, np.ndarray], clip: float) -> None:
    norm_sq = sum(float((g * g).sum()) for g in grads.values())
    norm = np.sqrt(norm_sq)
    if norm > clip:
        scale = clip / norm
        for g in grads.values():
            g *= scale


def train_epoch(
    params: BepalParams,
    opt_state: RmspropState,
    env: PredatorPreyEnv,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> dict[str, float]:
    """Collect an epoch of episodes and apply the configured optimizer steps.

    Gradients of the per-episode totals accumulate; an RMSprop step fires
    every ``episodes_per_update`` episodes (by default once, at epoch end).
    """
    params.zero_grads()
    steps_list, returns, completions = [], [], []
    loss_acc = {"actor": 0.0, "critic": 0.0, "aux_motion": 0.0, "aux_reward": 0.0,
                "entropy": 0.0, "total": 0.0}
    mse_motion, mse_reward = [], []
    per_update = cfg.episodes_per_update or cfg.episodes_per_epoch

    def apply_update():
        grads = params.collect_grads()
        if cfg.grad_clip is not None and grads:
            _clip_grads(grads, cfg.grad_clip)
        rmsprop_step(params.named_parameters(), grads, opt_state)
        params.zero_grads()

    for episode in range(cfg.episodes_per_epoch):
        env_seed = int(rng.integers(0, 2**62))
        try:
            with ad.Tape() as tape:
                batch = rollout_episode(
                    params, env, rng, env_seed=env_seed,
                    timeout_value_bootstrap=cfg.bootstrap_on_timeout,
                )
                if batch.length:
                    batch.motion_targets, batch.reward_targets = build_targets(
                        env, batch, cfg.gamma
                    )
                    losses = compute_losses(batch, cfg)
                    tape.backward(losses.loss)
                else:
                    losses = LossBreakdown()
        except ad.NonFiniteError as err:
            raise ad.NonFiniteError(
                f"episode {episode} (env seed {env_seed}) produced non-finite values: {err}"
            ) from err
        steps_list.append(batch.length)
        completions.append(batch.completed)
        returns.append(
            float(np.mean([batch.agent_return(i) for i in range(batch.n_agents)]))
        )
        for key in loss_acc:
            loss_acc[key] += getattr(losses, key)
        measured = belief_mse(batch)
        if measured is not None:
            mse_motion.append(measured[0])
            mse_reward.append(measured[1])
        if (episode + 1) % per_update == 0:
            apply_update()
    if cfg.episodes_per_epoch % per_update != 0:
        apply_update()
    n_episodes = cfg.episodes_per_epoch
    return {
        "avg_steps": float(np.mean(steps_list)),
        "completion_rate": float(np.mean(completions)),
        "avg_return": float(np.mean(returns)),
        "actor_loss": loss_acc["actor"] / n_episodes,
        "critic_loss": loss_acc["critic"] / n_episodes,
        "aux_motion_loss": loss_acc["aux_motion"] / n_episodes,
        "aux_reward_loss": loss_acc["aux_reward"] / n_episodes,
        "entropy": loss_acc["entropy"] / n_episodes,
        "total_loss": loss_acc["total"] / n_episodes,
        "motion_mse": float(np.mean(mse_motion)) if mse_motion else 0.0,
        "reward_mse": float(np.mean(mse_reward)) if mse_reward else 0.0,
    }
