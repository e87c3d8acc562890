"""Per-agent deterministic policy emitting sharing weights on the simplex.

The network maps an observation to logits over 1 + K_max slots: slot 0 is the
self-loop, the remaining slots hold the active neighbors in ascending id
order. A normalized exponential over the active slots produces the weights,
so the simplex constraint holds by construction under any noise; padded slots
are exactly zero. Training follows routed neighbor gradients: each agent
receives, for every outgoing edge, the edge target's sensitivity to that
weight, and ascends the batch-mean pullback through the softmax and network.
"""

from __future__ import annotations

import numpy as np

from . import approximator as ap
from .reward_sharing import SIMPLEX_TOL, WeightAssignment
from .topology import SharingGraph


class HighPolicy:
    """Observation -> outgoing sharing weights for one agent."""

    def __init__(self, agent_id, obs_dim, k_max, hidden=(32, 32), rng=None,
                 init_scheme="fan_in_uniform"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.agent_id = int(agent_id)
        self.k_max = int(k_max)
        # Zero output weights: until the first update the emitted weights are
        # exactly the bias pattern set by init_selfishness, independent of o.
        self.network = ap.init_params([obs_dim, *hidden, 1 + self.k_max], rng,
                                      scheme=init_scheme, zero_output_weights=True)
        self.adam = None

    def copy(self):
        import copy as _copy

        twin = _copy.copy(self)
        twin.network = self.network.copy()
        twin.adam = None
        return twin


def init_selfishness(policy: HighPolicy, s0: float, k_active: int) -> HighPolicy:
    """Bias the output so the initial weights are (s0, (1-s0)/k_active, ...).

    Inverts the normalized exponential: with zero pre-bias logits and
    k_active neighbor slots, a self bias of ln(s0 * k_active / (1 - s0))
    yields exactly s0 on the self-loop and an even split elsewhere.
    """
    if not (0.0 < s0 < 1.0):
        raise ValueError(f"initial selfishness {s0} outside (0, 1)")
    if k_active < 1:
        raise ValueError(f"k_active must be at least 1, got {k_active}")
    bias = policy.network.biases[-1]
    bias[:] = 0.0
    bias[0] = np.log(s0 * k_active / (1.0 - s0))
    return policy


class NoiseProcess:
    """Exploration noise injected into the pre-softmax logits.

    ``epsilon_gaussian`` adds N(0, sigma^2) to every active logit with
    probability epsilon per emission; ``ou`` evolves an Ornstein-Uhlenbeck
    state of the logit dimension. With ``sigma_scale='epsilon'`` the stddev is
    multiplied by the current low-level exploration rate. State resets at
    episode boundaries.
    """

    def __init__(self, kind, dim, sigma=1.0, epsilon=1.0, theta=0.15, sigma_scale="none"):
        if kind not in ("epsilon_gaussian", "ou", "none"):
            raise ValueError(f"unknown noise kind {kind!r}")
        self.kind = kind
        self.dim = int(dim)
        self.sigma = float(sigma)
        self.epsilon = float(epsilon)
        self.theta = float(theta)
        self.sigma_scale = sigma_scale
        self.state = np.zeros(self.dim)

    def reset(self):
        self.state[:] = 0.0

    def sample(self, rng, low_epsilon=1.0) -> np.ndarray:
        sigma = self.sigma * (low_epsilon if self.sigma_scale == "epsilon" else 1.0)
        if self.kind == "none" or sigma == 0.0:
            if self.kind == "ou":
                self.state += self.theta * (0.0 - self.state)
            return np.zeros(self.dim)
        if self.kind == "epsilon_gaussian":
            if rng.random() < self.epsilon:
                return rng.normal(0.0, sigma, self.dim)
            return np.zeros(self.dim)
        self.state = self.state + self.theta * (0.0 - self.state) \
            + sigma * rng.normal(0.0, 1.0, self.dim)
        return self.state.copy()


def slot_order(agent_id, neighbors) -> list:
    """Slot 0 is the agent itself, then the other neighbors ascending by id."""
    return [agent_id] + [j for j in neighbors if j != agent_id]


def _masked_softmax(logits, mask):
    shifted = np.where(mask > 0, logits, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted) * mask
    return e / e.sum(axis=-1, keepdims=True)


def emit_weights_batch(policy: HighPolicy, obs, n_active, noise=None) -> np.ndarray:
    """Padded weight rows for a batch; row b uses slots 0..n_active[b]-1."""
    obs = np.asarray(obs, dtype=float)
    logits = ap.forward(policy.network, obs)
    batch, width = logits.shape
    mask = np.arange(width)[None, :] < np.asarray(n_active)[:, None]
    if noise is not None:
        logits = logits + noise * mask
    w = _masked_softmax(logits, mask.astype(float))
    sums = w.sum(axis=1)
    if not np.all(np.abs(sums - 1.0) <= SIMPLEX_TOL):
        raise ValueError("emitted weights left the simplex")
    return w


def emit_weights(policy: HighPolicy, o, neighbors, noise: NoiseProcess | None = None,
                 rng=None, low_epsilon=1.0) -> dict:
    """Outgoing weights keyed by the agent's neighborhood (self included)."""
    order = slot_order(policy.agent_id, neighbors)
    if len(order) > 1 + policy.k_max:
        raise ValueError(
            f"{len(order) - 1} neighbors exceed the policy's {policy.k_max} slots"
        )
    noise_row = None
    if noise is not None:
        noise_row = noise.sample(rng, low_epsilon)[None, :]
    w = emit_weights_batch(policy, np.asarray(o, dtype=float)[None, :],
                           np.array([len(order)]), noise_row)[0]
    return {j: float(w[s]) for s, j in enumerate(order)}


def assignment_from_policies(policies, graph: SharingGraph, obs, noises=None,
                             rng=None, low_epsilon=1.0) -> WeightAssignment:
    """Emit every agent's weights against the current graph."""
    rows = []
    for i, policy in enumerate(policies):
        noise = None if noises is None else noises[i]
        rows.append(emit_weights(policy, obs[i], graph.neighbors(i), noise, rng, low_epsilon))
    return WeightAssignment(rows)


def route_gradients(graph: SharingGraph, g_in: list) -> list:
    """Exchange incoming-weight sensitivities across every directed edge.

    g_in[j][i] is agent j's gradient w.r.t. the weight w_ij that agent i
    controls; routing delivers it back as g_out[i][j]. Self components pass
    through unchanged.
    """
    for i in range(graph.n_agents):
        if set(g_in[i]) != set(graph.neighbors(i)):
            raise ValueError(
                f"g_in[{i}] keyed by {sorted(g_in[i])}, neighborhood is {list(graph.neighbors(i))}"
            )
    return [{j: g_in[j][i] for j in graph.neighbors(i)} for i in range(graph.n_agents)]


def policy_gradient(policy: HighPolicy, obs, n_active, g_slots):
    """Batch-mean ascent gradient of <g, emitted weights> w.r.t. parameters.

    The upstream slot gradients are pulled back through the normalized
    exponential's Jacobian, then through the network.
    """
    obs = np.asarray(obs, dtype=float)
    logits = ap.forward(policy.network, obs)
    batch, width = logits.shape
    mask = (np.arange(width)[None, :] < np.asarray(n_active)[:, None]).astype(float)
    w = _masked_softmax(logits, mask)
    g = np.asarray(g_slots, dtype=float) * mask
    inner = (g * w).sum(axis=1, keepdims=True)
    d_logits = w * (g - inner) / batch
    grads, _ = ap.backward(policy.network, obs, d_logits)
    return grads


def policy_update(policy: HighPolicy, obs, n_active, g_slots, lr, optimizer="sgd"):
    """One ascent step along the routed-gradient direction."""
    d_weights, d_biases = policy_gradient(policy, obs, n_active, g_slots)
    descent = ([-dw for dw in d_weights], [-db for db in d_biases])
    if optimizer == "sgd":
        ap.sgd_step(policy.network, descent, lr)
    elif optimizer == "adam":
        if policy.adam is None:
            policy.adam = ap.AdamState(policy.network)
        ap.adam_step(policy.network, descent, lr, policy.adam)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    return policy
