"""End-to-end training loop: rollouts, synchronized replay, alternating updates.

One step of the loop, in order: observations are exchanged, every high-level
policy emits its outgoing weights (held within an action interval), the
incoming views are assembled by edge transposition, actions are chosen
epsilon-greedily, the environment advances, raw rewards are exchanged and
shaped, and one transition per agent is stored under a common timestamp.

Updates alternate: the low level descends on TD error against the *stored*
behavior weights, then (at its own cadence) the high level re-emits weights
with the *current* policies, asks each Q-network for the gradient of its
greedy value w.r.t. every incoming weight, routes those gradients back across
the edges, and ascends. All replay draws come from one generator, so every
agent samples the same timestamps - the step that makes the cross-agent
weight transposition on replayed batches well defined.

Reported return/reward metrics come from periodic greedy evaluation episodes
(no action exploration, no weight noise) on frozen parameters; behavior-time
exploration never decays in some configurations, so training-time returns
would not reflect the learned policies.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import low_level as low
from . import high_level as high
from . import approximator as ap
from .config import RunConfig, validate
from .environments import make_env
from .low_level import QNetwork, Transition
from .metrics import MetricsTable
from .reward_sharing import WeightAssignment, identity_assignment, share_rewards, selfishness

CONSERVATION_RTOL = 1e-9


class ReplayBuffer:
    """Per-agent ring buffers kept in lockstep: one shared slot per timestep."""

    def __init__(self, n_agents, capacity):
        self.capacity = int(capacity)
        self.n_agents = int(n_agents)
        self.data = [[None] * self.capacity for _ in range(self.n_agents)]
        self.timestamps = [None] * self.capacity
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def append(self, transitions, timestamp) -> None:
        if len(transitions) != self.n_agents:
            raise ValueError("one transition per agent required")
        for i, tr in enumerate(transitions):
            self.data[i][self._next] = tr
        self.timestamps[self._next] = timestamp
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch, rng) -> np.ndarray:
        """One synchronized draw, shared by every agent's view."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=batch)

    def get(self, agent, indices) -> list:
        rows = self.data[agent]
        return [rows[k] for k in indices]

    def timestamps_at(self, indices) -> list:
        return [self.timestamps[k] for k in indices]


def epsilon_at(config: RunConfig, episode, step) -> float:
    unit = episode if config.epsilon_unit == "episode" else step
    return max(config.epsilon_end, config.epsilon_start * config.epsilon_decay ** unit)


class Trainer:
    """Runs one seeded experiment in one of three modes.

    ``ltos`` trains both levels; ``fixed`` freezes the high level at the
    selfishness-initializer output (no weight noise); ``independent`` drops
    sharing entirely (identity weights on the self-loop).
    """

    def __init__(self, config: RunConfig, seed: int, mode="ltos"):
        if mode not in ("ltos", "fixed", "independent"):
            raise ValueError(f"unknown mode {mode!r}")
        validate(config)
        self.config = config
        self.seed = int(seed)
        self.mode = mode
        streams = np.random.SeedSequence(self.seed).spawn(5)
        self.env_rng = np.random.default_rng(streams[0])
        self.agent_rng = np.random.default_rng(streams[1])
        self.replay_rng = np.random.default_rng(streams[2])
        self.eval_env_rng = np.random.default_rng(streams[3])
        init_rng = np.random.default_rng(streams[4])

        self.env = make_env(config, rng=self.env_rng)
        self.eval_env = make_env(config, rng=self.eval_env_rng)
        self.n_agents = self.env.n_agents
        first = self.env.reset()
        self._pending = first
        self.k_max = first.graph.k_max
        obs_dim = self.env.obs_dim
        n_actions = self.env.n_actions

        self.q_nets = [QNetwork(i, obs_dim, n_actions, config.hidden, init_rng,
                                config.init_scheme) for i in range(self.n_agents)]
        self.q_targets = [net.copy() for net in self.q_nets]
        self.policies = None
        self.policy_targets = None
        self.noises = None
        if mode != "independent":
            self.policies = [high.HighPolicy(i, obs_dim, self.k_max, config.hidden,
                                             init_rng, config.init_scheme)
                             for i in range(self.n_agents)]
            for i, policy in enumerate(self.policies):
                if config.env == "foraging":
                    k_active = max(1, min(config.k_neighbors, self.n_agents - 1))
                else:
                    k_active = max(1, first.graph.degree(i))
                high.init_selfishness(policy, config.selfishness, k_active)
            self.policy_targets = [p.copy() for p in self.policies]
            if mode == "ltos" and config.noise_kind != "none":
                self.noises = [high.NoiseProcess(config.noise_kind, 1 + self.k_max,
                                                 config.noise_sigma, config.noise_epsilon,
                                                 config.noise_theta, config.noise_sigma_scale)
                               for _ in range(self.n_agents)]

        self.buffer = ReplayBuffer(self.n_agents, config.buffer_capacity)
        self.global_step = 0
        self.episode_idx = 0
        self.max_conservation_err = 0.0
        self._held_assignment = None
        self._interval_left = 0
        self.last_sampled_timestamps = None

    # -- weight emission -------------------------------------------------------

    def _behavior_assignment(self, obs, graph, epsilon) -> WeightAssignment:
        if self.mode == "independent":
            return identity_assignment(graph)
        noisy = self.mode == "ltos"
        rows = []
        for i, policy in enumerate(self.policies):
            noise = self.noises[i] if (noisy and self.noises is not None) else None
            rows.append(high.emit_weights(policy, obs[i], graph.neighbors(i),
                                          noise, self.agent_rng, epsilon))
        return WeightAssignment(rows)

    def _noiseless_assignment(self, policies, obs, graph) -> WeightAssignment:
        if self.mode == "independent":
            return identity_assignment(graph)
        return WeightAssignment(
            [high.emit_weights(policies[i], obs[i], graph.neighbors(i))
             for i in range(self.n_agents)]
        )

    @staticmethod
    def _incoming(assignment: WeightAssignment, graph, i) -> dict:
        return {j: assignment[j][i] for j in graph.neighbors(i)}

    # -- rollout ----------------------------------------------------------------

    def rollout_step(self, epsilon):
        """Advance the environment once; store one transition per agent."""
        step_in = self._pending
        obs, graph = step_in.observations, step_in.graph
        if self._interval_left > 0 and self._held_assignment is not None \
                and self._held_graph is graph:
            assignment = self._held_assignment
            self._interval_left -= 1
        else:
            assignment = self._behavior_assignment(obs, graph, epsilon)
            self._held_assignment = assignment
            self._held_graph = graph
            self._interval_left = self.config.action_interval - 1
        w_in = [self._incoming(assignment, graph, i) for i in range(self.n_agents)]
        actions = [low.select_action(self.q_nets[i], obs[i], w_in[i],
                                     graph.neighbors(i), epsilon, self.agent_rng)
                   for i in range(self.n_agents)]
        step_out = self.env.step(actions)
        raw = step_out.rewards
        shaped = share_rewards(graph, assignment, raw)
        err = abs(shaped.sum() - raw.sum())
        tol = CONSERVATION_RTOL * max(1.0, abs(raw.sum()))
        self.max_conservation_err = max(self.max_conservation_err, err)
        if err > tol:
            raise AssertionError(f"reward conservation violated: |delta|={err}")
        transitions = [
            Transition(o=obs[i], w_in=w_in[i], a=actions[i], r_w=float(shaped[i]),
                       o_next=step_out.observations[i],
                       neighbors=graph.neighbors(i),
                       neighbors_next=step_out.graph.neighbors(i),
                       done=step_out.done)
            for i in range(self.n_agents)
        ]
        self.buffer.append(transitions, timestamp=self.global_step)
        self.global_step += 1
        self._pending = step_out
        return step_in, step_out, assignment, actions

    # -- updates ----------------------------------------------------------------

    def _target_incoming_rows(self, batches):
        """Next-step incoming weights for the bootstrap term.

        The bootstrap treats the sharing weights as held across the step: Q
        must estimate the value of keeping the queried weights in place, which
        is the quantity the high level differentiates. Each incoming weight
        therefore carries over from the stored behavior weights wherever the
        edge still exists; edges that appear only at t+1 (dynamic topology)
        fall back to the target high-level policy's emission on o_next.
        """
        if self.mode == "independent":
            return [[{j: 1.0 if j == i else 0.0 for j in tr.neighbors_next}
                     for tr in batches[i]] for i in range(self.n_agents)]
        emitted = None
        needs_emission = any(
            tr.neighbors_next != tr.neighbors
            for batch in batches for tr in batch
        )
        if needs_emission:
            emitted = []
            for j in range(self.n_agents):
                rows = np.stack([tr.o_next for tr in batches[j]])
                n_active = np.array([len(tr.neighbors_next) for tr in batches[j]])
                w = high.emit_weights_batch(self.policy_targets[j], rows, n_active)
                keyed = []
                for b, tr in enumerate(batches[j]):
                    order = high.slot_order(j, tr.neighbors_next)
                    keyed.append({dst: w[b, s] for s, dst in enumerate(order)})
                emitted.append(keyed)
        out = []
        for i in range(self.n_agents):
            rows = []
            for b, tr in enumerate(batches[i]):
                rows.append({
                    j: (tr.w_in[j] if j in tr.w_in else emitted[j][b][i])
                    for j in tr.neighbors_next
                })
            out.append(rows)
        return out

    def _current_incoming_rows(self, batches):
        """Re-emit behavior-free weights with the current high policies."""
        emitted = []
        for j in range(self.n_agents):
            rows = np.stack([tr.o for tr in batches[j]])
            n_active = np.array([len(tr.neighbors) for tr in batches[j]])
            w = high.emit_weights_batch(self.policies[j], rows, n_active)
            keyed = []
            for b, tr in enumerate(batches[j]):
                order = high.slot_order(j, tr.neighbors)
                keyed.append({dst: w[b, s] for s, dst in enumerate(order)})
            emitted.append(keyed)
        return [[{j: emitted[j][b][i] for j in tr.neighbors}
                 for b, tr in enumerate(batches[i])] for i in range(self.n_agents)]

    def low_update(self):
        """One synchronized TD descent step for every agent's Q-network."""
        config = self.config
        idx = self.buffer.sample_indices(config.low_batch_size, self.replay_rng)
        self.last_sampled_timestamps = self.buffer.timestamps_at(idx)
        batches = [self.buffer.get(i, idx) for i in range(self.n_agents)]
        w_in_next = self._target_incoming_rows(batches)
        losses = []
        for i in range(self.n_agents):
            batch = batches[i]
            obs2 = np.stack([tr.o_next for tr in batch])
            w, flag, mask = low.pack_slots(i, [tr.neighbors_next for tr in batch],
                                           w_in_next[i])
            q2 = low.q_values_batch(self.q_targets[i], obs2, w, flag, mask)
            bootstrap = q2.max(axis=1)
            ys = np.array([
                tr.r_w + (0.0 if tr.done else config.gamma * bootstrap[b])
                for b, tr in enumerate(batch)
            ])
            losses.append(low.q_update(self.q_nets[i], batch, ys, config.low_lr,
                                       config.low_optimizer))
        for online, target in zip(self.q_nets, self.q_targets):
            for p_on, p_tg in zip(online.parts(), target.parts()):
                ap.soft_update_params(p_tg, p_on, config.tau)
        return losses

    def high_update(self):
        """Routed-gradient ascent step for every agent's high-level policy."""
        config = self.config
        idx = self.buffer.sample_indices(config.high_batch_size, self.replay_rng)
        batches = [self.buffer.get(i, idx) for i in range(self.n_agents)]
        w_in_cur = self._current_incoming_rows(batches)
        g_in = []
        for i in range(self.n_agents):
            batch = batches[i]
            obs = np.stack([tr.o for tr in batch])
            w, flag, mask = low.pack_slots(i, [tr.neighbors for tr in batch], w_in_cur[i])
            d_w = low.q_input_gradient_batch(self.q_nets[i], obs, w, flag, mask)
            g_in.append([
                {j: d_w[b, s] for s, j in enumerate(tr.neighbors)}
                for b, tr in enumerate(batch)
            ])
        for i in range(self.n_agents):
            batch = batches[i]
            obs = np.stack([tr.o for tr in batch])
            n_active = np.array([len(tr.neighbors) for tr in batch])
            g_slots = np.zeros((len(batch), 1 + self.k_max))
            for b, tr in enumerate(batch):
                routed = {j: g_in[j][b][i] for j in tr.neighbors}
                for s, j in enumerate(high.slot_order(i, tr.neighbors)):
                    g_slots[b, s] = routed[j]
            high.policy_update(self.policies[i], obs, n_active, g_slots,
                               config.high_lr, config.high_optimizer)
        for online, target in zip(self.policies, self.policy_targets):
            ap.soft_update_params(target.network, online.network, config.tau)

    # -- evaluation --------------------------------------------------------------

    def evaluate(self):
        """Greedy, noiseless rollouts on frozen parameters; no replay writes."""
        returns = np.zeros(self.n_agents)
        rewards = np.zeros(self.n_agents)
        steps = 0
        for _ in range(self.config.eval_episodes):
            step = self.eval_env.reset()
            while not step.done:
                obs, graph = step.observations, step.graph
                assignment = self._noiseless_assignment(
                    self.policies if self.policies else None, obs, graph)
                w_in = [self._incoming(assignment, graph, i) for i in range(self.n_agents)]
                actions = [int(np.argmax(low.q_values(self.q_nets[i], obs[i], w_in[i],
                                                      graph.neighbors(i))))
                           for i in range(self.n_agents)]
                step = self.eval_env.step(actions)
                returns += step.rewards
                rewards += step.rewards
                steps += 1
        returns /= self.config.eval_episodes
        rewards /= max(steps, 1)
        return returns, rewards

    # -- main loop -----------------------------------------------------------------

    def _high_due_step(self):
        every = self.config.high_update_every
        return (self.mode == "ltos" and self.policies is not None
                and self.config.high_update_unit == "step"
                and every > 0 and math.isfinite(every)
                and self.global_step % int(every) == 0
                and len(self.buffer) >= self.config.high_sample_size)

    def _high_due_episode(self, finished_episode):
        every = self.config.high_update_every
        return (self.mode == "ltos" and self.policies is not None
                and self.config.high_update_unit == "episode"
                and every > 0 and math.isfinite(every)
                and (finished_episode + 1) % int(every) == 0
                and len(self.buffer) >= self.config.high_sample_size)

    def train(self) -> MetricsTable:
        config = self.config
        table = MetricsTable()
        eval_returns, eval_rewards = self.evaluate()
        episode = 0
        while episode < config.episodes:
            if config.max_env_steps > 0 and \
                    self.global_step + self.env.horizon > config.max_env_steps:
                break
            if episode > 0 and episode % config.eval_every == 0:
                eval_returns, eval_rewards = self.evaluate()
            epsilon = epsilon_at(config, episode, self.global_step)
            step = self._pending if not self.env.done else self.env.reset()
            self._pending = step
            if self.noises is not None:
                for noise in self.noises:
                    noise.reset()
            self._held_assignment = None
            self._interval_left = 0
            selfish_sum = np.zeros(self.n_agents)
            loss_sum = np.zeros(self.n_agents)
            loss_events = 0
            length = 0
            done = False
            while not done:
                if config.epsilon_unit == "step":
                    epsilon = epsilon_at(config, episode, self.global_step)
                step_in, step_out, assignment, _ = self.rollout_step(epsilon)
                noiseless = self._noiseless_assignment(self.policies, step_in.observations,
                                                       step_in.graph)
                selfish_sum += selfishness(noiseless)
                length += 1
                done = step_out.done
                if len(self.buffer) >= config.low_sample_size and \
                        self.global_step % config.low_update_every == 0:
                    losses = self.low_update()
                    loss_sum += losses
                    loss_events += 1
                    if self._high_due_step():
                        self.high_update()
            if self._high_due_episode(episode):
                self.high_update()
            for i in range(self.n_agents):
                table.append(episode=episode, step=self.global_step, agent=i,
                             **{"return": float(eval_returns[i])},
                             reward=float(eval_rewards[i]),
                             selfishness=float(selfish_sum[i] / max(length, 1)),
                             q_loss=float(loss_sum[i] / max(loss_events, 1)))
            episode += 1
        self.episode_idx = episode
        return table

    # -- checkpoints ----------------------------------------------------------------

    def save_checkpoints(self, directory) -> None:
        """Layout: <dir>/<agent>/{q,phi,q_target,phi_target}.bin."""
        for i in range(self.n_agents):
            agent_dir = os.path.join(directory, str(i))
            os.makedirs(agent_dir, exist_ok=True)
            ap.save_params(self.q_nets[i].parts(), os.path.join(agent_dir, "q.bin"))
            ap.save_params(self.q_targets[i].parts(),
                           os.path.join(agent_dir, "q_target.bin"))
            if self.policies is not None:
                ap.save_params(self.policies[i].network, os.path.join(agent_dir, "phi.bin"))
                ap.save_params(self.policy_targets[i].network,
                               os.path.join(agent_dir, "phi_target.bin"))


def train_run(config: RunConfig, seed: int, mode="ltos") -> MetricsTable:
    """Convenience wrapper: one seeded run, returns its metrics table."""
    return Trainer(config, seed, mode).train()
