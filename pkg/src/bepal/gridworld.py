"""Predator-prey gridworld with limited vision and a stationary prey.

An m x m grid holds N predator agents, one stationary prey, and optional
impassable obstacles.  Agents see a (2*vision_radius+1)^2 window and receive
a -0.05 penalty per step until they first stand on the prey cell; the step
that lands on the prey is still penalized, later steps are not.  Agents that
have reached the prey freeze in place but keep observing and communicating.

States are immutable snapshots; ``step`` returns a new state, so replaying a
logged episode is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "STEP_PENALTY",
    "ACTIONS",
    "ACTION_NAMES",
    "N_ACTIONS",
    "OBS_FEATURES",
    "EnvConfig",
    "GridState",
    "ObservationGraph",
    "StepResult",
    "PredatorPreyEnv",
]

STEP_PENALTY = -0.05

# movement deltas indexed by action id
ACTIONS: tuple[tuple[int, int], ...] = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
ACTION_NAMES = ("up", "down", "left", "right", "stay")
N_ACTIONS = len(ACTIONS)

# per-node feature layout:
#   0 rel_row/m, 1 rel_col/m,
#   2..5 one-hot object type (self, teammate, prey, obstacle),
#   6 reached flag (the object's own catch status when it is an agent),
#   7 abs_row/m, 8 abs_col/m
OBS_FEATURES = 9
_TYPE_SELF, _TYPE_TEAMMATE, _TYPE_PREY, _TYPE_OBSTACLE = 0, 1, 2, 3


@dataclass(frozen=True)
class EnvConfig:
    map_size: int
    n_agents: int
    n_obstacles: int = 0
    max_steps: int = 40
    vision_radius: int = 1
    occlusion: bool = False  # obstacles blocking sight; off by default
    seed: int | None = None

    def __post_init__(self):
        if self.map_size < 3:
            raise ValueError(f"map_size must be >= 3, got {self.map_size}")
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be >= 1, got {self.n_agents}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.vision_radius < 0:
            raise ValueError(f"vision_radius must be >= 0, got {self.vision_radius}")
        limit = self.map_size * self.map_size - self.n_agents - 1
        if not 0 <= self.n_obstacles < limit:
            raise ValueError(
                f"n_obstacles must be in [0, {limit}) for this map, got {self.n_obstacles}"
            )


@dataclass(frozen=True)
class GridState:
    agent_positions: tuple[tuple[int, int], ...]
    prey_position: tuple[int, int]
    obstacles: frozenset[tuple[int, int]]
    reached: tuple[bool, ...]
    step_count: int
    episode_id: int

    @property
    def all_reached(self) -> bool:
        return all(self.reached)


@dataclass(frozen=True)
class ObservationGraph:
    """Star graph of visible objects; node 0 is the observing agent."""

    node_features: np.ndarray  # (n_nodes, OBS_FEATURES)
    edges: tuple[tuple[int, int], ...] = field(default=())

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]


@dataclass(frozen=True)
class StepResult:
    rewards: tuple[float, ...]
    done: bool
    per_agent_done: tuple[bool, ...]


class PlacementError(RuntimeError):
    """Raised when no connected layout can be sampled for a config."""


class PredatorPreyEnv:
    """Environment instance; single-threaded, one seeded generator per instance."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self._episode_counter = 0

    # ---------------- reset ----------------

    def reset(self, seed: int | None = None) -> GridState:
        cfg = self.config
        if seed is None:
            seed = cfg.seed
        rng = np.random.default_rng(seed)
        m = cfg.map_size
        n_cells = m * m
        n_entities = cfg.n_agents + 1 + cfg.n_obstacles
        for _ in range(1000):
            cells = rng.permutation(n_cells)[:n_entities]
            coords = [(int(c) // m, int(c) % m) for c in cells]
            agents = tuple(coords[: cfg.n_agents])
            prey = coords[cfg.n_agents]
            obstacles = frozenset(coords[cfg.n_agents + 1 :])
            if self._all_agents_connected(agents, prey, obstacles):
                self._episode_counter += 1
                return GridState(
                    agent_positions=agents,
                    prey_position=prey,
                    obstacles=obstacles,
                    reached=tuple(pos == prey for pos in agents),
                    step_count=0,
                    episode_id=self._episode_counter,
                )
        raise PlacementError(
            f"no layout with all agents connected to the prey after 1000 attempts ({cfg})"
        )

    def _all_agents_connected(self, agents, prey, obstacles) -> bool:
        # flood fill from the prey over non-obstacle cells, 4-connected
        m = self.config.map_size
        seen = {prey}
        frontier = [prey]
        targets = set(agents)
        while frontier:
            r, c = frontier.pop()
            targets.discard((r, c))
            if not targets:
                return True
            for dr, dc in ACTIONS[:4]:
                nxt = (r + dr, c + dc)
                if (
                    0 <= nxt[0] < m
                    and 0 <= nxt[1] < m
                    and nxt not in obstacles
                    and nxt not in seen
                ):
                    seen.add(nxt)
                    frontier.append(nxt)
        return not targets

    # ---------------- transition ----------------

    def step(self, state: GridState, actions: Iterable[int]) -> tuple[GridState, StepResult]:
        cfg = self.config
        actions = tuple(actions)
        if len(actions) != cfg.n_agents:
            raise ValueError(f"expected {cfg.n_agents} actions, got {len(actions)}")
        m = cfg.map_size
        new_positions = []
        for i, action in enumerate(actions):
            if not 0 <= action < N_ACTIONS:
                raise ValueError(f"action {action} for agent {i} out of range [0, {N_ACTIONS})")
            pos = state.agent_positions[i]
            if state.reached[i]:
                new_positions.append(pos)  # frozen on the prey
                continue
            dr, dc = ACTIONS[action]
            nxt = (pos[0] + dr, pos[1] + dc)
            if not (0 <= nxt[0] < m and 0 <= nxt[1] < m) or nxt in state.obstacles:
                nxt = pos  # blocked moves resolve to stay
            new_positions.append(nxt)
        # the landing step is still penalized; the penalty stops afterwards
        rewards = tuple(0.0 if state.reached[i] else STEP_PENALTY for i in range(cfg.n_agents))
        reached = tuple(
            state.reached[i] or new_positions[i] == state.prey_position
            for i in range(cfg.n_agents)
        )
        new_state = GridState(
            agent_positions=tuple(new_positions),
            prey_position=state.prey_position,
            obstacles=state.obstacles,
            reached=reached,
            step_count=state.step_count + 1,
            episode_id=state.episode_id,
        )
        done = all(reached) or new_state.step_count == cfg.max_steps
        return new_state, StepResult(rewards=rewards, done=done, per_agent_done=reached)

    # ---------------- observation ----------------

    def observe(self, state: GridState, agent: int) -> ObservationGraph:
        cfg = self.config
        if not 0 <= agent < cfg.n_agents:
            raise ValueError(f"agent index {agent} out of range")
        m = float(cfg.map_size)
        radius = cfg.vision_radius
        my_r, my_c = state.agent_positions[agent]

        def visible(pos: tuple[int, int]) -> bool:
            if max(abs(pos[0] - my_r), abs(pos[1] - my_c)) > radius:
                return False
            if cfg.occlusion and self._occluded((my_r, my_c), pos, state.obstacles):
                return False
            return True

        rows = [self._node(state, (my_r, my_c), (my_r, my_c), _TYPE_SELF, state.reached[agent])]
        for j, pos in enumerate(state.agent_positions):
            if j != agent and visible(pos):
                rows.append(self._node(state, (my_r, my_c), pos, _TYPE_TEAMMATE, state.reached[j]))
        if visible(state.prey_position):
            rows.append(self._node(state, (my_r, my_c), state.prey_position, _TYPE_PREY, False))
        for pos in sorted(state.obstacles):
            if visible(pos):
                rows.append(self._node(state, (my_r, my_c), pos, _TYPE_OBSTACLE, False))
        features = np.array(rows, dtype=np.float64)
        return ObservationGraph(node_features=features, edges=tuple((0, j) for j in range(1, len(rows))))

    def _node(self, state, origin, pos, kind, reached_flag) -> list[float]:
        m = float(self.config.map_size)
        row = [0.0] * OBS_FEATURES
        row[0] = (pos[0] - origin[0]) / m
        row[1] = (pos[1] - origin[1]) / m
        row[2 + kind] = 1.0
        row[6] = 1.0 if reached_flag else 0.0
        row[7] = pos[0] / m
        row[8] = pos[1] / m
        return row

    @staticmethod
    def _occluded(origin, pos, obstacles) -> bool:
        # coarse line-of-sight: any obstacle strictly between on the segment's cells
        steps = max(abs(pos[0] - origin[0]), abs(pos[1] - origin[1]))
        if steps <= 1:
            return False
        for t in range(1, steps):
            r = round(origin[0] + (pos[0] - origin[0]) * t / steps)
            c = round(origin[1] + (pos[1] - origin[1]) * t / steps)
            if (r, c) in obstacles and (r, c) != pos:
                return True
        return False

    # ---------------- privileged ground truth ----------------

    def ground_truth(
        self, state: GridState, next_state: GridState
    ) -> tuple[np.ndarray, tuple[tuple[int, int], ...]]:
        """Motion matrix for the transition state -> next_state.

        Rows 0..N-1: (next_row/m, next_col/m, drow, dcol) per agent; the last
        row is the prey at (prey_row/m, prey_col/m, 0, 0).  Also returns the
        post-transition agent positions for reward bookkeeping.
        """
        if state.episode_id != next_state.episode_id:
            raise ValueError("ground_truth: states belong to different episodes")
        if next_state.step_count != state.step_count + 1:
            raise ValueError("ground_truth: states are not consecutive")
        m = float(self.config.map_size)
        n = self.config.n_agents
        motion = np.zeros((n + 1, 4), dtype=np.float64)
        for i in range(n):
            r0, c0 = state.agent_positions[i]
            r1, c1 = next_state.agent_positions[i]
            motion[i] = (r1 / m, c1 / m, r1 - r0, c1 - c0)
        motion[n] = (state.prey_position[0] / m, state.prey_position[1] / m, 0.0, 0.0)
        return motion, next_state.agent_positions

    # ---------------- debugging ----------------

    def render(self, state: GridState) -> str:
        m = self.config.map_size
        grid = [["." for _ in range(m)] for _ in range(m)]
        pr, pc = state.prey_position
        grid[pr][pc] = "P"
        for r, c in state.obstacles:
            grid[r][c] = "#"
        for r, c in state.agent_positions:
            grid[r][c] = "A"
        return "\n".join("".join(row) for row in grid)
