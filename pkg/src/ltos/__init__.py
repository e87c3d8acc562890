"""Decentralized reward sharing for networked multi-agent reinforcement learning.

Each agent learns two policies over its graph neighborhood: a high-level
deterministic policy that decides how to split its reward among neighbors
(a point on the simplex), and a low-level action-value policy trained on
the shaped rewards. The two levels form a bi-level problem solved by
alternating first-order updates with a gradient exchange along the edges.
"""

from .config import RunConfig, defaults_for
from .environments import EnvStep, ForagingEnv, PrisonerEnv, make_env
from .high_level import (HighPolicy, NoiseProcess, emit_weights, init_selfishness,
                         policy_update, route_gradients)
from .low_level import (QNetwork, Transition, q_input_gradient, q_update, q_values,
                        select_action, td_target)
from .metrics import MetricsTable, episodes_to_threshold, final_window_mean
from .oracle_baselines import (MatrixGame, analyze_matrix_game, build_prisoner_mdp,
                               fixed_ltos, foraging_upper_bound, independent_q,
                               prisoner_payoff_matrix, value_iterate)
from .reward_sharing import WeightAssignment, selfishness, share_rewards
from .topology import SharingGraph, build_graph, knn_neighborhoods
from .trainer import ReplayBuffer, Trainer, train_run

__version__ = "0.1.0"
