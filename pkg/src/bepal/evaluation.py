"""Evaluation protocols: step statistics, transfer runs, and the
prediction-accuracy vs. performance correlation analysis."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sstats

from .gridworld import EnvConfig, N_ACTIONS, PredatorPreyEnv
from .model import BepalParams
from .training import EpisodeBatch, belief_mse, build_targets, rollout_episode

__all__ = [
    "EpisodeStats",
    "EvalReport",
    "CorrelationReport",
    "evaluate",
    "random_policy_stats",
    "pearson",
    "correlation_study",
    "transfer_eval",
]


@dataclass(frozen=True)
class EpisodeStats:
    env_seed: int
    steps: int
    completed: bool
    returns: tuple[float, ...]
    motion_mse: float | None = None
    reward_mse: float | None = None


@dataclass(frozen=True)
class EvalReport:
    n_episodes: int
    avg_steps: float
    std_steps: float
    completion_rate: float
    motion_mse: float | None
    reward_mse: float | None
    episodes: tuple[EpisodeStats, ...]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CorrelationReport:
    pearson_motion: float
    pearson_reward: float
    p_motion: float
    p_reward: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def _aggregate(per_episode: list[EpisodeStats]) -> EvalReport:
    steps = np.array([e.steps for e in per_episode], dtype=np.float64)
    motion = [e.motion_mse for e in per_episode if e.motion_mse is not None]
    reward = [e.reward_mse for e in per_episode if e.reward_mse is not None]
    return EvalReport(
        n_episodes=len(per_episode),
        avg_steps=float(steps.mean()),
        std_steps=float(steps.std()),
        completion_rate=float(np.mean([e.completed for e in per_episode])),
        motion_mse=float(np.mean(motion)) if motion else None,
        reward_mse=float(np.mean(reward)) if reward else None,
        episodes=tuple(per_episode),
    )


def evaluate(
    params: BepalParams,
    env_config: EnvConfig,
    n_episodes: int,
    seed: int,
    *,
    greedy: bool = False,
    measure_beliefs: bool = False,
    gamma: float = 1.0,
) -> EvalReport:
    """Run the policy without any training machinery.

    Actions are sampled from the learned policy by default (argmax behind the
    ``greedy`` flag); the belief decoder is skipped unless its error is being
    measured.  Episodes that hit the step cap count as max_steps.  Never
    mutates parameters.
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    if env_config.n_agents != params.n_agents:
        raise ValueError(
            f"model is bound to {params.n_agents} agents, env has {env_config.n_agents}"
        )
    env = PredatorPreyEnv(env_config)
    rng = np.random.default_rng(seed)
    per_episode = []
    for _ in range(n_episodes):
        env_seed = int(rng.integers(0, 2**62))
        batch = rollout_episode(
            params, env, rng, env_seed=env_seed, with_beliefs=measure_beliefs, greedy=greedy
        )
        motion_err = reward_err = None
        if measure_beliefs and batch.length:
            batch.motion_targets, batch.reward_targets = build_targets(env, batch, gamma)
            motion_err, reward_err = belief_mse(batch)
        per_episode.append(
            EpisodeStats(
                env_seed=env_seed,
                steps=batch.length,
                completed=batch.completed,
                returns=tuple(batch.agent_return(i, gamma) for i in range(batch.n_agents)),
                motion_mse=motion_err,
                reward_mse=reward_err,
            )
        )
    return _aggregate(per_episode)


def random_policy_stats(env_config: EnvConfig, n_episodes: int, seed: int) -> EvalReport:
    """Uniform-random joint policy; the baseline every learned run is held against."""
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    env = PredatorPreyEnv(env_config)
    rng = np.random.default_rng(seed)
    per_episode = []
    for _ in range(n_episodes):
        env_seed = int(rng.integers(0, 2**62))
        state = env.reset(env_seed)
        rewards = []
        while not state.all_reached and state.step_count < env_config.max_steps:
            actions = rng.integers(0, N_ACTIONS, size=env_config.n_agents)
            state, result = env.step(state, actions.tolist())
            rewards.append(result.rewards)
        rewards = np.array(rewards, dtype=np.float64).reshape(len(rewards), env_config.n_agents)
        per_episode.append(
            EpisodeStats(
                env_seed=env_seed,
                steps=len(rewards),
                completed=state.all_reached,
                returns=tuple(float(rewards[:, i].sum()) for i in range(env_config.n_agents)),
            )
        )
    return _aggregate(per_episode)


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Product-moment correlation with a two-sided t-test p-value (n-2 dof)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"series must be equal-length 1-d, got {x.shape} and {y.shape}")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        raise ValueError("correlation undefined: a series has zero variance")
    r = float((dx * dy).sum() / denom)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(sstats.t.sf(abs(t), n - 2))
    return r, p


def correlation_study(history: Sequence[Mapping[str, float]]) -> CorrelationReport:
    """Correlate per-epoch prediction accuracy with game performance.

    ``history`` rows carry avg_steps, motion_mse and reward_mse.  Accuracy is
    the negated MSE and performance the negated step count, so improving
    predictions alongside improving play yields positive coefficients.
    """
    if len(history) < 3:
        raise ValueError(f"need at least 3 epochs of history, got {len(history)}")
    steps = [-float(row["avg_steps"]) for row in history]
    acc_motion = [-float(row["motion_mse"]) for row in history]
    acc_reward = [-float(row["reward_mse"]) for row in history]
    r_motion, p_motion = pearson(acc_motion, steps)
    r_reward, p_reward = pearson(acc_reward, steps)
    return CorrelationReport(
        pearson_motion=r_motion,
        pearson_reward=r_reward,
        p_motion=p_motion,
        p_reward=p_reward,
        n_points=len(history),
    )


def transfer_eval(
    params: BepalParams,
    target_config: EnvConfig,
    n_episodes: int,
    seed: int,
    *,
    greedy: bool = False,
) -> EvalReport:
    """Evaluate a trained model on a different map without any updates.

    The belief heads bind the parameter shapes to the agent count, so
    transfer is supported across map size and obstacles only.
    """
    if target_config.n_agents != params.n_agents:
        raise ValueError(
            f"cannot transfer a {params.n_agents}-agent model to a "
            f"{target_config.n_agents}-agent environment: the prediction heads are sized by agent count"
        )
    return evaluate(params, target_config, n_episodes, seed, greedy=greedy)
