"""Per-agent action-value learner conditioned on incoming sharing weights.

The Q-network reads the agent's observation through a self-encoder and each
incoming weight through a shared per-neighbor encoder whose outputs are
mean-pooled, so the value is invariant to neighbor ordering and tolerates a
changing neighborhood size. Incoming weights are keyed by agent id; a slot
flag marks the self-loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import approximator as ap


@dataclass
class Transition:
    """One replay record: everything needed to recompute values later."""

    o: np.ndarray
    w_in: dict          # neighbor id -> incoming weight, behavior values
    a: int
    r_w: float          # shaped reward
    o_next: np.ndarray
    neighbors: tuple    # neighborhood at t (self included)
    neighbors_next: tuple
    done: bool


class QNetwork:
    """Self encoder + pooled neighbor encoder + action-value head for one agent."""

    def __init__(self, agent_id, obs_dim, n_actions, hidden=(32, 32), rng=None,
                 init_scheme="fan_in_uniform"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.agent_id = int(agent_id)
        self.n_actions = int(n_actions)
        self.self_encoder = ap.init_params([obs_dim, *hidden], rng,
                                           out_activation="relu", scheme=init_scheme)
        self.neighbor_encoder = ap.init_params([2, *hidden], rng,
                                               out_activation="relu", scheme=init_scheme)
        self.head = ap.init_params([2 * hidden[-1], hidden[-1], n_actions], rng,
                                   scheme=init_scheme)
        self.adam = None  # created on first adam update

    def parts(self):
        return [self.self_encoder, self.neighbor_encoder, self.head]

    def copy(self):
        import copy as _copy

        twin = _copy.copy(self)
        twin.self_encoder = self.self_encoder.copy()
        twin.neighbor_encoder = self.neighbor_encoder.copy()
        twin.head = self.head.copy()
        twin.adam = None
        return twin


def pack_slots(agent_id, neighbors_rows, w_in_rows):
    """Pad keyed incoming weights into (weights, self_flags, mask) arrays."""
    batch = len(neighbors_rows)
    width = max(len(nb) for nb in neighbors_rows)
    w = np.zeros((batch, width))
    flag = np.zeros((batch, width))
    mask = np.zeros((batch, width))
    for b, (neighbors, w_in) in enumerate(zip(neighbors_rows, w_in_rows)):
        if set(w_in) != set(neighbors):
            raise ValueError(
                f"incoming weights keyed by {sorted(w_in)} but neighborhood is {list(neighbors)}"
            )
        for s, j in enumerate(neighbors):
            w[b, s] = w_in[j]
            mask[b, s] = 1.0
            if j == agent_id:
                flag[b, s] = 1.0
    return w, flag, mask


def _pool_forward(net, obs, w, flag, mask):
    batch, width = w.shape
    h_self = ap.forward(net.self_encoder, obs)
    slot_in = np.stack([w, flag], axis=-1).reshape(batch * width, 2)
    slot_h = ap.forward(net.neighbor_encoder, slot_in).reshape(batch, width, -1)
    counts = mask.sum(axis=1, keepdims=True)
    pooled = (slot_h * mask[:, :, None]).sum(axis=1) / counts
    head_in = np.concatenate([h_self, pooled], axis=1)
    return ap.forward(net.head, head_in), (slot_in, head_in, counts)


def q_values_batch(net, obs, w, flag, mask):
    """Action values for a padded batch; rows may have different active slots."""
    q, _ = _pool_forward(net, np.asarray(obs, dtype=float), w, flag, mask)
    return q


def q_values(net: QNetwork, o, w_in: dict, neighbors) -> np.ndarray:
    """Action values for one observation with keyed incoming weights."""
    w, flag, mask = pack_slots(net.agent_id, [tuple(neighbors)], [w_in])
    return q_values_batch(net, np.asarray(o, dtype=float)[None, :], w, flag, mask)[0]


def _backward_through(net, obs, w, flag, mask, upstream, cache):
    """Gradients of <upstream, q> w.r.t. all parameters and the weight slots."""
    slot_in, head_in, counts = cache
    batch, width = w.shape
    hidden = head_in.shape[1] // 2
    head_grads, d_head_in = ap.backward(net.head, head_in, upstream)
    self_grads, _ = ap.backward(net.self_encoder, obs, d_head_in[:, :hidden])
    d_pooled = d_head_in[:, hidden:]
    d_slot_h = (d_pooled[:, None, :] * mask[:, :, None]) / counts[:, :, None]
    neigh_grads, d_slot_in = ap.backward(
        net.neighbor_encoder, slot_in, d_slot_h.reshape(batch * width, -1)
    )
    d_w = d_slot_in[:, 0].reshape(batch, width) * mask
    return {"self": self_grads, "neighbor": neigh_grads, "head": head_grads}, d_w


def select_action(net: QNetwork, o, w_in, neighbors, epsilon, rng) -> int:
    """Epsilon-greedy action; greedy ties go to the lowest action index."""
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError(f"epsilon={epsilon} outside [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(net.n_actions))
    return int(np.argmax(q_values(net, o, w_in, neighbors)))


def td_target(target_net: QNetwork, transition: Transition, gamma, w_in_next) -> float:
    """Bootstrapped regression target from the target network's greedy value."""
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"gamma={gamma} outside [0, 1]")
    if transition.done:
        return float(transition.r_w)
    q_next = q_values(target_net, transition.o_next, w_in_next, transition.neighbors_next)
    return float(transition.r_w + gamma * q_next.max())


def q_update(net: QNetwork, minibatch, targets, lr, optimizer="adam"):
    """One descent step on the mean squared TD error; returns the pre-step loss.

    The regression inputs use each record's stored behavior weights, not a
    recomputation from the current high-level policy.
    """
    if not minibatch:
        raise ValueError("empty minibatch")
    obs = np.stack([tr.o for tr in minibatch])
    acts = np.array([tr.a for tr in minibatch])
    ys = np.asarray(targets, dtype=float)
    w, flag, mask = pack_slots(net.agent_id, [tr.neighbors for tr in minibatch],
                               [tr.w_in for tr in minibatch])
    q, cache = _pool_forward(net, obs, w, flag, mask)
    batch = len(minibatch)
    taken = q[np.arange(batch), acts]
    residual = taken - ys
    loss = float(np.mean(residual ** 2))
    if not np.isfinite(loss):
        raise ValueError(f"non-finite TD loss {loss}")
    upstream = np.zeros_like(q)
    upstream[np.arange(batch), acts] = 2.0 * residual / batch
    grads, _ = _backward_through(net, obs, w, flag, mask, upstream, cache)
    _apply(net, grads, lr, optimizer)
    return loss


def _apply(net, grads, lr, optimizer):
    names = ("self", "neighbor", "head")
    parts = net.parts()
    if optimizer == "sgd":
        for name, params in zip(names, parts):
            ap.sgd_step(params, grads[name], lr)
    elif optimizer == "adam":
        if net.adam is None:
            net.adam = {name: ap.AdamState(params) for name, params in zip(names, parts)}
        for name, params in zip(names, parts):
            ap.adam_step(params, grads[name], lr, net.adam[name])
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")


def q_input_gradient_batch(net, obs, w, flag, mask):
    """d(max-action Q)/d(incoming weight) for every row and active slot."""
    q, cache = _pool_forward(net, obs, w, flag, mask)
    upstream = np.zeros_like(q)
    upstream[np.arange(len(q)), np.argmax(q, axis=1)] = 1.0
    _, d_w = _backward_through(net, obs, w, flag, mask, upstream, cache)
    return d_w


def q_input_gradient(net: QNetwork, o, w_in: dict, neighbors) -> dict:
    """Sensitivity of the greedy Q-value to each incoming weight, keyed by id."""
    neighbors = tuple(neighbors)
    w, flag, mask = pack_slots(net.agent_id, [neighbors], [w_in])
    d_w = q_input_gradient_batch(net, np.asarray(o, dtype=float)[None, :], w, flag, mask)
    return {j: float(d_w[0, s]) for s, j in enumerate(neighbors)}
