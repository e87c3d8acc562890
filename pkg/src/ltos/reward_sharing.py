"""Applying sharing weights to raw rewards, and the selfishness diagnostic.

Each agent i owns one weight per outgoing directed edge (including its
self-loop). The weights over its neighborhood form a probability simplex, so
the total reward in the system is conserved exactly: what an agent gives up
is received, in full, by its neighbors.
"""

from __future__ import annotations

import numpy as np

from .topology import SharingGraph

SIMPLEX_TOL = 1e-6


class WeightAssignment:
    """Per-agent outgoing weights, keyed by neighbor id.

    ``weights[i]`` maps every j in agent i's neighborhood (self included) to
    w_ij in [0, 1], summing to one. Assignments violating the simplex
    constraint by more than 1e-6 are rejected rather than renormalized.
    """

    def __init__(self, weights: list):
        self.weights = [dict(w) for w in weights]

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, i):
        return self.weights[i]

    def validate(self, graph: SharingGraph) -> None:
        if len(self.weights) != graph.n_agents:
            raise ValueError(
                f"assignment covers {len(self.weights)} agents, graph has {graph.n_agents}"
            )
        for i, w_out in enumerate(self.weights):
            hood = graph.neighbors(i)
            if set(w_out) != set(hood):
                raise ValueError(
                    f"agent {i}: weight keys {sorted(w_out)} do not match neighborhood {list(hood)}"
                )
            total = 0.0
            for j, w in w_out.items():
                if not (-SIMPLEX_TOL <= w <= 1.0 + SIMPLEX_TOL):
                    raise ValueError(f"agent {i}: weight w[{i}][{j}]={w} outside [0, 1]")
                total += w
            if abs(total - 1.0) > SIMPLEX_TOL:
                raise ValueError(f"agent {i}: outgoing weights sum to {total}, not 1")


def identity_assignment(graph: SharingGraph) -> WeightAssignment:
    """Every agent keeps its full reward (w_ii = 1)."""
    return WeightAssignment(
        [{j: (1.0 if j == i else 0.0) for j in graph.neighbors(i)} for i in range(graph.n_agents)]
    )


def share_rewards(graph: SharingGraph, w: WeightAssignment, raw) -> np.ndarray:
    """Shaped rewards: each agent receives sum over neighbors j of w_ji * r_j."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (graph.n_agents,):
        raise ValueError(f"expected {graph.n_agents} rewards, got shape {raw.shape}")
    w.validate(graph)
    shaped = np.zeros(graph.n_agents)
    for i in range(graph.n_agents):
        shaped[i] = sum(w[j][i] * raw[j] for j in graph.neighbors(i))
    return shaped


def selfishness(w: WeightAssignment) -> np.ndarray:
    """The self-loop weight per agent: the reward fraction each keeps."""
    return np.array([w[i][i] for i in range(len(w))])
