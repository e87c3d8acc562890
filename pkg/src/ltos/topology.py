"""Agent communication graphs: directed sharing edges and dynamic neighborhoods.

Agents form an undirected graph. For reward sharing the graph is lifted to a
directed edge set: one self-loop per agent plus both orientations of every
undirected edge. An agent's neighborhood contains itself and all adjacent
agents, sorted ascending by id, which gives every agent a stable slot layout
for policy inputs and outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SharingGraph:
    """Immutable agent graph plus the derived directed sharing edges."""

    n_agents: int
    k_max: int
    undirected_edges: frozenset  # pairs (i, j) with i < j
    directed_edges: frozenset    # ordered pairs, includes (i, i) for every i
    neighborhoods: tuple         # per agent: ascending tuple of ids, self included

    def neighbors(self, i: int) -> tuple:
        return self.neighborhoods[i]

    def degree(self, i: int) -> int:
        return len(self.neighborhoods[i]) - 1


def _assemble(n_agents: int, edges: set, k_max: int) -> SharingGraph:
    adjacency = [set() for _ in range(n_agents)]
    for i, j in edges:
        adjacency[i].add(j)
        adjacency[j].add(i)
    directed = {(i, i) for i in range(n_agents)}
    for i, j in edges:
        directed.add((i, j))
        directed.add((j, i))
    neighborhoods = tuple(tuple(sorted(adjacency[i] | {i})) for i in range(n_agents))
    return SharingGraph(
        n_agents=n_agents,
        k_max=k_max,
        undirected_edges=frozenset(edges),
        directed_edges=frozenset(directed),
        neighborhoods=neighborhoods,
    )


def build_graph(n_agents: int, undirected_edges, k_max: int) -> SharingGraph:
    """Construct a SharingGraph from an undirected edge list.

    Rejects out-of-range endpoints, self-edges, duplicate edges and any agent
    whose degree would exceed ``k_max``.
    """
    if n_agents < 1:
        raise ValueError(f"need at least one agent, got {n_agents}")
    seen = set()
    for pair in undirected_edges:
        i, j = pair
        if not (0 <= i < n_agents and 0 <= j < n_agents):
            raise ValueError(f"edge {pair} has an endpoint outside [0, {n_agents})")
        if i == j:
            raise ValueError(f"edge {pair} joins an agent to itself; self-loops are implicit")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ValueError(f"duplicate edge {pair}")
        seen.add(key)
    degree = [0] * n_agents
    for i, j in seen:
        degree[i] += 1
        degree[j] += 1
    for i, d in enumerate(degree):
        if d > k_max:
            raise ValueError(f"agent {i} has degree {d}, exceeding the cap k_max={k_max}")
    return _assemble(n_agents, seen, k_max)


def knn_lists(positions, k: int) -> list:
    """Per-agent list of the k nearest other agents (Euclidean, ties by smaller id)."""
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of agents ({n})")
    diffs = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=-1))
    out = []
    for i in range(n):
        order = sorted((dist[i, j], j) for j in range(n) if j != i)
        out.append([j for _, j in order[:k]])
    return out


def knn_neighborhoods(positions, k: int) -> SharingGraph:
    """Dynamic-topology graph: each agent linked to its k nearest agents.

    The nearest-neighbor relation is asymmetric, so the edge set is its
    symmetric closure: if j is among i's k nearest, the undirected edge
    {i, j} exists and both agents see each other in their neighborhoods.
    Neighborhood sizes can therefore exceed k + 1.
    """
    nearest = knn_lists(positions, k)
    n = len(nearest)
    edges = set()
    for i, chosen in enumerate(nearest):
        for j in chosen:
            edges.add((min(i, j), max(i, j)))
    return _assemble(n, edges, k_max=max(n - 1, 1))


def to_text(graph: SharingGraph) -> str:
    """Line format: header ``n k_max``, then one ``i j`` per undirected edge."""
    lines = [f"{graph.n_agents} {graph.k_max}"]
    for i, j in sorted(graph.undirected_edges):
        lines.append(f"{i} {j}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> SharingGraph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty graph text")
    n, k_max = (int(tok) for tok in lines[0].split())
    edges = [tuple(int(tok) for tok in ln.split()) for ln in lines[1:]]
    return build_graph(n, edges, k_max)
