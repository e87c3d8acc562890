"""Exact and simple reference solutions for the corridor and foraging games.

The corridor's joint MDP is small enough to solve exactly: value iteration on
the sum-of-rewards objective gives a hard upper anchor that learned policies
may approach but not beat. A 2x2 matrix-game analyzer certifies the dilemma
structure, and two reduced learners (no sharing, frozen sharing) provide
floors and ablations. The foraging game has no tractable oracle; a loose
per-seed upper bound is computed from initial agent-to-food distances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .environments import prisoner_transition
from .metrics import MetricsTable
from .trainer import Trainer

TERMINAL = "terminal"
JOINT_ACTIONS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass
class JointMDP:
    """Enumerated two-agent corridor: joint states, actions, branch tables."""

    states: list                 # non-terminal (pos_a, pos_b) pairs, plus TERMINAL
    start: tuple
    transitions: dict            # (state, joint action) -> [(prob, sum_reward, next)]
    end: int
    step_cost: float
    horizon: int


def _branches(state, joint_action, end, step_cost):
    pos_a, pos_b = state
    next_a, next_b, rewards, done, collision = prisoner_transition(
        pos_a, pos_b, joint_action, end, step_cost
    )
    if collision:
        out = []
        for winner in (0, 1):
            _, _, r, _, _ = prisoner_transition(pos_a, pos_b, joint_action, end,
                                                step_cost, tie_winner=winner)
            out.append((0.5, float(r.sum()), TERMINAL))
        return out
    nxt = TERMINAL if done else (next_a, next_b)
    return [(1.0, float(rewards.sum()), nxt)]


def build_prisoner_mdp(end=4, step_cost=0.01, horizon=50) -> JointMDP:
    """Exhaustive simulation of the corridor dynamics over all joint states."""
    goals = (-end, 0, end)
    cells = [p for p in range(-end, end + 1) if p not in goals]
    states = [(a, b) for a in cells for b in cells]
    transitions = {}
    for state in states:
        for action in JOINT_ACTIONS:
            transitions[(state, action)] = _branches(state, action, end, step_cost)
    return JointMDP(states=states + [TERMINAL], start=(-1, 1),
                    transitions=transitions, end=end, step_cost=step_cost,
                    horizon=horizon)


def value_iterate(mdp: JointMDP, gamma=0.99, tol=1e-10, max_iter=100000):
    """Bellman optimality iteration on the sum objective.

    Returns (values, greedy joint policy, optimal per-agent undiscounted
    average return from the start state, iterations).
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    values = {s: 0.0 for s in mdp.states}
    iterations = 0
    while True:
        residual = 0.0
        new_values = {}
        for state in mdp.states:
            if state == TERMINAL:
                new_values[state] = 0.0
                continue
            best = -np.inf
            for action in JOINT_ACTIONS:
                q = sum(p * (r + gamma * values[nxt])
                        for p, r, nxt in mdp.transitions[(state, action)])
                best = max(best, q)
            new_values[state] = best
            residual = max(residual, abs(best - values[state]))
        values = new_values
        iterations += 1
        if residual < tol:
            break
        if iterations >= max_iter:
            raise RuntimeError(f"value iteration did not converge in {max_iter} sweeps")
    policy = {}
    for state in mdp.states:
        if state == TERMINAL:
            continue
        scores = []
        for action in JOINT_ACTIONS:
            q = sum(p * (r + gamma * values[nxt])
                    for p, r, nxt in mdp.transitions[(state, action)])
            scores.append(q)
        policy[state] = JOINT_ACTIONS[int(np.argmax(scores))]
    optimal = _undiscounted_return(mdp, policy, mdp.start, 0) / 2.0
    return values, policy, optimal, iterations


def _undiscounted_return(mdp, policy, state, depth):
    if state == TERMINAL or depth >= mdp.horizon:
        return 0.0
    total = 0.0
    for p, r, nxt in mdp.transitions[(state, policy[state])]:
        total += p * (r + _undiscounted_return(mdp, policy, nxt, depth + 1))
    return total


def oracle_summary(config: RunConfig):
    """(optimal per-agent return, state count, sweeps) for the configured corridor."""
    mdp = build_prisoner_mdp(config.corridor_end, config.step_cost, config.horizon)
    _, _, optimal, iterations = value_iterate(mdp, config.gamma)
    return optimal, len(mdp.states), iterations


# -- matrix game ---------------------------------------------------------------

@dataclass
class MatrixGame:
    """2x2 bimatrix; payoffs[i, j, p] is player p's payoff under profile (i, j)."""

    payoffs: np.ndarray

    def __post_init__(self):
        self.payoffs = np.asarray(self.payoffs, dtype=float)
        if self.payoffs.shape != (2, 2, 2):
            raise ValueError(f"expected a (2, 2, 2) payoff array, got {self.payoffs.shape}")
        if not np.isfinite(self.payoffs).all():
            raise ValueError("payoffs must be finite")


@dataclass
class GameAnalysis:
    nash: list          # pure equilibrium profiles
    welfare: list       # sum-maximizing profiles
    dilemma: bool       # unique Nash that misses the welfare optimum


def analyze_matrix_game(game: MatrixGame) -> GameAnalysis:
    pay = game.payoffs
    nash = []
    for i in range(2):
        for j in range(2):
            if pay[i, j, 0] >= pay[1 - i, j, 0] and pay[i, j, 1] >= pay[i, 1 - j, 1]:
                nash.append((i, j))
    sums = pay.sum(axis=2)
    best = sums.max()
    welfare = [(i, j) for i in range(2) for j in range(2)
               if np.isclose(sums[i, j], best)]
    dilemma = len(nash) == 1 and nash[0] not in welfare
    return GameAnalysis(nash=nash, welfare=welfare, dilemma=dilemma)


def prisoner_payoff_matrix(end=4, step_cost=0.01) -> MatrixGame:
    """Strategy-level payoffs by trajectory enumeration.

    Action 0 is the cooperate strategy (always walk outward), action 1 the
    defect strategy (always walk to the middle). The defect/defect collision
    is averaged over its two equally likely winners.
    """
    payoffs = np.zeros((2, 2, 2))
    for sa in range(2):
        for sb in range(2):
            payoffs[sa, sb] = _strategy_return((-1, 1), (sa, sb), end, step_cost, 0)
    return MatrixGame(payoffs)


def _strategy_return(state, strategies, end, step_cost, depth):
    if depth > 4 * end:
        return np.zeros(2)
    next_a, next_b, rewards, done, collision = prisoner_transition(
        state[0], state[1], strategies, end, step_cost
    )
    if collision:
        total = np.zeros(2)
        for winner in (0, 1):
            _, _, r, _, _ = prisoner_transition(state[0], state[1], strategies,
                                                end, step_cost, tie_winner=winner)
            total += 0.5 * r
        return total
    if done:
        return rewards
    return rewards + _strategy_return((next_a, next_b), strategies, end, step_cost,
                                      depth + 1)


# -- reduced learners ------------------------------------------------------------

def independent_q(config: RunConfig, seed=None) -> MetricsTable:
    """Per-agent Q-learning on raw rewards; no sharing (w_ii = 1 throughout)."""
    seed = config.seeds[0] if seed is None else seed
    return Trainer(config, seed, mode="independent").train()


def fixed_ltos(config: RunConfig, s0: float, seed=None) -> MetricsTable:
    """Full pipeline with the high level frozen at the selfishness initializer."""
    if not (0.0 < s0 < 1.0):
        raise ValueError(f"s0={s0} outside (0, 1)")
    import dataclasses

    frozen = dataclasses.replace(config, selfishness=s0)
    seed = config.seeds[0] if seed is None else seed
    return Trainer(frozen, seed, mode="fixed").train()


# -- foraging upper bound ---------------------------------------------------------

def foraging_upper_bound(config: RunConfig, seed: int) -> float:
    """Loose per-seed cap on mean per-step reward from initial food distances.

    An agent at Manhattan distance d from its nearest food needs d-1 moves
    before its first bite and can collect at most +1 per step afterwards;
    attacks between agents only lower the group total.
    """
    from .environments import make_env

    env = make_env(config, seed=seed)
    step = env.reset()
    agents = env.state.agent_positions
    foods = env.state.food_positions
    horizon = env.horizon
    if len(foods) == 0 or horizon == 0:
        return 0.0
    bounds = []
    for pos in agents:
        d = int(np.abs(foods - pos).sum(axis=1).min())
        bounds.append(max(0, horizon - max(0, d - 1)) / horizon)
    return float(np.mean(bounds))
