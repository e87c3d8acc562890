"""Run configuration: one flat key=value record describing an experiment.

Defaults follow the prisoner column of the hyperparameter tables; selecting
``env=foraging`` switches to the jungle column before applying overrides.
Files are plain ``key=value`` lines ('#' starts a comment), diffable and
round-trippable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass
class RunConfig:
    env: str = "prisoner"
    episodes: int = 10000
    max_env_steps: int = 20000        # 0 = unlimited; episodes never truncated
    gamma: float = 0.99
    low_lr: float = 1e-3
    high_lr: float = 1e-1
    low_optimizer: str = "adam"
    high_optimizer: str = "sgd"
    tau: float = 0.1
    epsilon_start: float = 0.8
    epsilon_decay: float = 1.0
    epsilon_end: float = 0.8
    epsilon_unit: str = "episode"     # anneal per episode or per step
    noise_kind: str = "epsilon_gaussian"
    noise_epsilon: float = 0.8
    noise_sigma: float = 1.0
    noise_theta: float = 0.15
    noise_sigma_scale: str = "none"   # 'epsilon': scale sigma by the current eps
    low_batch_size: int = 10
    low_sample_size: int = 10         # minimum buffer fill before low updates
    high_batch_size: int = 32
    high_sample_size: int = 2000      # minimum buffer fill before high updates
    buffer_capacity: int = 200000
    low_update_every: int = 1         # in steps
    high_update_every: float = 1.0    # 0 or inf = never
    high_update_unit: str = "step"    # 'step' or 'episode'
    action_interval: int = 1
    selfishness: float = 0.5
    hidden: tuple = (32, 32)
    init_scheme: str = "fan_in_uniform"   # or 'normal'
    eval_every: int = 20
    eval_episodes: int = 1
    seeds: tuple = (1, 2, 3, 4, 5)
    # environment geometry
    corridor_end: int = 4
    step_cost: float = 0.01
    horizon: int = 50
    grid_size: int = 10
    n_agents: int = 8
    n_foods: int = 5
    k_neighbors: int = 3
    food_consumed: bool = False


_FORAGING_OVERRIDES = dict(
    episodes=2000,
    max_env_steps=0,
    gamma=0.96,
    low_lr=1e-4,
    high_lr=1e-4,
    tau=0.01,
    epsilon_start=0.6,
    epsilon_decay=0.996,
    epsilon_end=0.01,
    noise_kind="ou",
    noise_epsilon=1.0,
    noise_sigma=0.025,
    noise_sigma_scale="epsilon",
    high_sample_size=5000,
    high_update_every=100.0,
    high_update_unit="episode",
    horizon=120,
    eval_episodes=3,
)

_CHOICES = {
    "env": ("prisoner", "foraging"),
    "low_optimizer": ("sgd", "adam"),
    "high_optimizer": ("sgd", "adam"),
    "epsilon_unit": ("episode", "step"),
    "noise_kind": ("epsilon_gaussian", "ou", "none"),
    "noise_sigma_scale": ("none", "epsilon"),
    "high_update_unit": ("step", "episode"),
    "init_scheme": ("fan_in_uniform", "normal"),
}


def defaults_for(env: str) -> RunConfig:
    config = RunConfig()
    if env == "foraging":
        for key, value in _FORAGING_OVERRIDES.items():
            setattr(config, key, value)
        config.env = "foraging"
    elif env != "prisoner":
        raise ValueError(f"unknown environment {env!r}")
    return config


def validate(config: RunConfig) -> RunConfig:
    if not (0.0 <= config.gamma <= 1.0):
        raise ValueError(f"gamma={config.gamma} outside [0, 1]")
    for name in ("low_lr", "high_lr", "tau"):
        if getattr(config, name) <= 0:
            raise ValueError(f"{name} must be positive")
    if config.tau > 1.0:
        raise ValueError(f"tau={config.tau} outside (0, 1]")
    for name in ("epsilon_start", "epsilon_end"):
        if not (0.0 <= getattr(config, name) <= 1.0):
            raise ValueError(f"{name} outside [0, 1]")
    if not (0.0 < config.epsilon_decay <= 1.0):
        raise ValueError("epsilon_decay outside (0, 1]")
    if not (0.0 < config.selfishness < 1.0):
        raise ValueError(f"selfishness={config.selfishness} outside (0, 1)")
    if config.action_interval < 1:
        raise ValueError("action_interval must be at least 1")
    for name in ("episodes", "low_batch_size", "high_batch_size", "buffer_capacity",
                 "low_update_every", "eval_every", "eval_episodes"):
        if getattr(config, name) < 1 and not (name == "episodes" and config.episodes == 0):
            raise ValueError(f"{name} must be at least 1")
    if config.high_update_every < 0:
        raise ValueError("high_update_every must be non-negative")
    if not (0.0 <= config.noise_epsilon <= 1.0):
        raise ValueError("noise_epsilon outside [0, 1]")
    if config.noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if not config.seeds:
        raise ValueError("at least one seed required")
    for key, options in _CHOICES.items():
        if getattr(config, key) not in options:
            raise ValueError(f"{key}={getattr(config, key)!r} not one of {options}")
    return config


def _parse_value(name, kind, raw, sample):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple:
        if not raw:
            raise ValueError(f"{name}: empty list")
        element = int if all(isinstance(v, int) for v in sample) else float
        return tuple(element(tok) for tok in raw.split(","))
    return raw


def from_text(text: str) -> RunConfig:
    """Parse key=value lines; unknown keys and out-of-range values are errors."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        pairs.append((key.strip(), raw))
    env = "prisoner"
    for key, raw in pairs:
        if key == "env":
            env = raw.strip()
    config = defaults_for(env)
    known = {f.name: f for f in fields(RunConfig)}
    for key, raw in pairs:
        if key not in known:
            raise ValueError(f"unknown configuration key {key!r}")
        default = getattr(config, key)
        kind = type(default)
        if key == "high_update_every":
            kind = float
        setattr(config, key, _parse_value(key, kind, raw, default))
    return validate(config)


def to_text(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"
