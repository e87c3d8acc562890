"""Desk-scale social-dilemma environments behind one contract.

Both environments expose seeded ``reset() -> EnvStep`` and
``step(actions) -> EnvStep``. An EnvStep carries per-agent observations, raw
rewards, the termination flag and the communication graph valid for the step.

The prisoner corridor is a two-agent grid game: a middle goal is one step
away ("defect") while the far goals pay off only if both agents walk away
from each other ("cooperate"). The foraging grid holds N agents and L
stationary foods; eating pays +1, attacking an agent is a negative-sum +2/-4,
and the 3-nearest-neighbor topology changes as agents move.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .topology import SharingGraph, build_graph, knn_lists, knn_neighborhoods

PRISONER_ACTIONS = ("left", "right")
FORAGING_ACTIONS = (
    "up", "down", "left", "right",
    "attack-up", "attack-down", "attack-left", "attack-right",
)
_DELTAS = {"up": (0, 1), "down": (0, -1), "left": (-1, 0), "right": (1, 0)}


@dataclass
class EnvStep:
    observations: list      # per-agent float vectors
    rewards: np.ndarray     # per-agent raw rewards
    done: bool
    graph: SharingGraph


@dataclass
class PrisonerState:
    pos_a: int   # corridor cell of agent 0, in [-E, +E]
    pos_b: int   # corridor cell of agent 1
    t: int


@dataclass
class ForagingState:
    agent_positions: np.ndarray  # (N, 2) int cells
    food_positions: np.ndarray   # (L, 2) int cells
    t: int


# -- prisoner corridor ---------------------------------------------------------

# Each agent observes the corridor in its own mirrored frame (own outer goal
# toward negative x), so both start at framed -1 and "left" always means the
# cooperative direction. This makes the two agents' learning problems
# symmetric without changing the game.
_FRAMES = (1, -1)


def prisoner_transition(pos_a, pos_b, actions, end, step_cost, tie_winner=None):
    """Pure one-step dynamics of the corridor.

    ``actions`` are framed per-agent indices (0 = left, 1 = right).
    ``tie_winner`` resolves a simultaneous arrival at the middle cell: None
    means "report the collision to the caller" (rewards assume no winner yet).
    Returns (next_a, next_b, rewards, done, collision).
    """
    moves = []
    for idx, action in enumerate(actions):
        framed = -1 if action == 0 else 1
        moves.append(framed * _FRAMES[idx])
    next_a = pos_a + moves[0]
    next_b = pos_b + moves[1]
    rewards = np.full(2, -step_cost)
    goals = (-end, 0, end)
    on_goal = (next_a in goals, next_b in goals)
    collision = next_a == 0 and next_b == 0
    if collision:
        if tie_winner is not None:
            rewards[tie_winner] += 1.0
    else:
        for idx, hit in enumerate(on_goal):
            if hit:
                rewards[idx] += 1.0
    done = any(on_goal)
    return next_a, next_b, rewards, done, collision


class PrisonerEnv:
    """Two agents on a corridor with goals at both ends and in the middle."""

    n_agents = 2
    n_actions = len(PRISONER_ACTIONS)
    obs_dim = 2

    def __init__(self, end=4, step_cost=0.01, horizon=50, seed=0, rng=None):
        if end < 2:
            raise ValueError(f"corridor end offset must be at least 2, got {end}")
        self.end = int(end)
        self.step_cost = float(step_cost)
        self.horizon = int(horizon)
        self.rng = np.random.default_rng(seed) if rng is None else rng
        self.graph = build_graph(2, [(0, 1)], k_max=1)
        self.state = None
        self.done = True

    def _observations(self):
        own = np.array([self.state.pos_a, -self.state.pos_b], dtype=float)
        other = np.array([self.state.pos_b, -self.state.pos_a], dtype=float)
        return [np.array([own[i], other[i]]) / self.end for i in range(2)]

    def reset(self) -> EnvStep:
        self.state = PrisonerState(pos_a=-1, pos_b=1, t=0)
        self.done = False
        return EnvStep(self._observations(), np.zeros(2), False, self.graph)

    def step(self, actions) -> EnvStep:
        if self.done:
            raise RuntimeError("step() called after the episode ended")
        next_a, next_b, rewards, done, collision = prisoner_transition(
            self.state.pos_a, self.state.pos_b, actions, self.end, self.step_cost
        )
        if collision:
            winner = int(self.rng.integers(2))
            rewards[winner] += 1.0
            done = True
        t = self.state.t + 1
        done = done or t >= self.horizon
        self.state = PrisonerState(next_a, next_b, t)
        self.done = done
        return EnvStep(self._observations(), rewards, done, self.graph)


# -- foraging grid -------------------------------------------------------------

class ForagingEnv:
    """N agents and L stationary foods on a GxG grid with dynamic topology.

    One action per agent per step: a move (fails against occupied or
    contested cells, contests won by the lower id) or a directional attack.
    Attacking food pays +1, attacking an agent pays the attacker +2 and costs
    the victim -4, attacking an empty cell costs -0.01. Neighborhoods are the
    k nearest agents, recomputed after movement.
    """

    n_actions = len(FORAGING_ACTIONS)

    def __init__(self, grid=10, n_agents=8, n_foods=5, k=3, horizon=120,
                 food_consumed=False, seed=0, rng=None):
        if n_agents + n_foods > grid * grid:
            raise ValueError(
                f"{n_agents} agents + {n_foods} foods exceed the {grid}x{grid} grid"
            )
        self.grid = int(grid)
        self.n_agents = int(n_agents)
        self.n_foods = int(n_foods)
        self.k = int(k)  # observation slot count; the knn relation clamps to n-1
        self._knn_k = min(self.k, max(n_agents - 1, 0))
        self.horizon = int(horizon)
        self.food_consumed = bool(food_consumed)
        self.rng = np.random.default_rng(seed) if rng is None else rng
        self.obs_dim = 2 + 6 + 2 * self.k
        self.state = None
        self.graph = None
        self.done = True

    def _rebuild_graph(self):
        if self.n_agents == 1:
            self.graph = build_graph(1, [], k_max=1)
            self._nearest = [[]]
        else:
            positions = self.state.agent_positions
            self.graph = knn_neighborhoods(positions, self._knn_k)
            self._nearest = knn_lists(positions, self._knn_k)

    def _observations(self):
        g = self.grid
        agents = self.state.agent_positions
        foods = self.state.food_positions
        obs = []
        for i in range(self.n_agents):
            own = agents[i]
            parts = [2.0 * own / max(g - 1, 1) - 1.0]
            food_slots = np.zeros(6)
            if len(foods):
                offsets = foods - own
                order = np.lexsort((np.arange(len(foods)), (offsets ** 2).sum(axis=1)))
                for slot, fi in enumerate(order[:3]):
                    food_slots[2 * slot: 2 * slot + 2] = offsets[fi] / g
            parts.append(food_slots)
            agent_slots = np.zeros(2 * self.k)
            for slot, j in enumerate(self._nearest[i]):
                agent_slots[2 * slot: 2 * slot + 2] = (agents[j] - own) / g
            parts.append(agent_slots)
            obs.append(np.concatenate(parts))
        return obs

    def reset(self) -> EnvStep:
        cells = self.rng.choice(self.grid * self.grid,
                                size=self.n_agents + self.n_foods, replace=False)
        coords = np.stack([cells % self.grid, cells // self.grid], axis=1)
        self.state = ForagingState(
            agent_positions=coords[: self.n_agents].astype(int),
            food_positions=coords[self.n_agents:].astype(int),
            t=0,
        )
        self.done = False
        self._rebuild_graph()
        return EnvStep(self._observations(), np.zeros(self.n_agents), False, self.graph)

    def _resolve_moves(self, actions):
        agents = self.state.agent_positions
        occupied = {tuple(p) for p in agents}
        occupied |= {tuple(p) for p in self.state.food_positions}
        targets = {}
        for i, action in enumerate(actions):
            name = FORAGING_ACTIONS[action]
            if name.startswith("attack"):
                continue
            dx, dy = _DELTAS[name]
            tx, ty = agents[i][0] + dx, agents[i][1] + dy
            if not (0 <= tx < self.grid and 0 <= ty < self.grid):
                continue
            if (tx, ty) in occupied:
                continue
            targets.setdefault((tx, ty), []).append(i)
        new_positions = agents.copy()
        for cell, movers in targets.items():
            new_positions[min(movers)] = cell
        return new_positions

    def step(self, actions) -> EnvStep:
        if self.done:
            raise RuntimeError("step() called after the episode ended")
        actions = list(actions)
        new_positions = self._resolve_moves(actions)
        rewards = np.zeros(self.n_agents)
        agent_at = {tuple(p): i for i, p in enumerate(new_positions)}
        food_cells = {tuple(p): fi for fi, p in enumerate(self.state.food_positions)}
        eaten = set()
        for i, action in enumerate(actions):
            name = FORAGING_ACTIONS[action]
            if not name.startswith("attack"):
                continue
            dx, dy = _DELTAS[name.split("-")[1]]
            cell = (new_positions[i][0] + dx, new_positions[i][1] + dy)
            if cell in agent_at:
                rewards[i] += 2.0
                rewards[agent_at[cell]] -= 4.0
            elif cell in food_cells:
                rewards[i] += 1.0
                if self.food_consumed:
                    eaten.add(food_cells[cell])
            else:
                rewards[i] -= 0.01
        foods = self.state.food_positions
        if eaten:
            keep = [fi for fi in range(len(foods)) if fi not in eaten]
            foods = foods[keep]
        self.state = ForagingState(new_positions, foods, self.state.t + 1)
        self.done = self.state.t >= self.horizon
        self._rebuild_graph()
        return EnvStep(self._observations(), rewards, self.done, self.graph)


def make_env(config, seed=0, rng=None):
    """Environment factory from a RunConfig-like object."""
    if config.env == "prisoner":
        return PrisonerEnv(end=config.corridor_end, step_cost=config.step_cost,
                           horizon=config.horizon, seed=seed, rng=rng)
    if config.env == "foraging":
        return ForagingEnv(grid=config.grid_size, n_agents=config.n_agents,
                           n_foods=config.n_foods, k=config.k_neighbors,
                           horizon=config.horizon, food_consumed=config.food_consumed,
                           seed=seed, rng=rng)
    raise ValueError(f"unknown environment {config.env!r}")


def write_trace(path, rows) -> None:
    """Episode trace CSV: one row per (t, agent) with obs..., action, reward."""
    rows = list(rows)
    width = max(len(r[2]) for r in rows) if rows else 0
    header = ["t", "agent"] + [f"obs{k}" for k in range(width)] + ["action", "reward"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, agent, obs, action, reward in rows:
            writer.writerow([t, agent] + [repr(float(v)) for v in obs]
                            + [action, repr(float(reward))])
