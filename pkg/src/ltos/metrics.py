"""Run metrics: fixed-schema CSV tables, cross-seed aggregation, summaries."""

from __future__ import annotations

import numpy as np

HEADER = ("episode", "step", "agent", "return", "reward", "selfishness", "q_loss")


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class MetricsTable:
    """Row-per-(episode, agent) training record with a fixed header."""

    def __init__(self, rows=None):
        self.rows = list(rows) if rows is not None else []

    def append(self, **kw):
        self.rows.append(tuple(kw[name] for name in HEADER))

    def to_text(self) -> str:
        lines = [",".join(HEADER)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def read(cls, path) -> "MetricsTable":
        with open(path) as fh:
            lines = fh.read().splitlines()
        if not lines or tuple(lines[0].split(",")) != HEADER:
            raise ValueError(f"{path}: not a metrics CSV")
        rows = []
        for line in lines[1:]:
            ep, step, agent, ret, rew, self_w, loss = line.split(",")
            rows.append((int(ep), int(step), int(agent), float(ret),
                         float(rew), float(self_w), float(loss)))
        return cls(rows)

    def episodes(self):
        return sorted({row[0] for row in self.rows})

    def per_episode_return(self) -> dict:
        """Episode -> return averaged over agents."""
        sums, counts = {}, {}
        for ep, _, _, ret, *_ in self.rows:
            sums[ep] = sums.get(ep, 0.0) + ret
            counts[ep] = counts.get(ep, 0) + 1
        return {ep: sums[ep] / counts[ep] for ep in sums}

    def per_episode_reward(self) -> dict:
        sums, counts = {}, {}
        for ep, _, _, _, rew, *_ in self.rows:
            sums[ep] = sums.get(ep, 0.0) + rew
            counts[ep] = counts.get(ep, 0) + 1
        return {ep: sums[ep] / counts[ep] for ep in sums}


def final_window_mean(table: MetricsTable, fraction=0.1, metric="return") -> float:
    """Mean of the per-episode agent-averaged metric over the last fraction."""
    series = (table.per_episode_return() if metric == "return"
              else table.per_episode_reward())
    episodes = sorted(series)
    if not episodes:
        return float("nan")
    window = max(1, int(np.ceil(len(episodes) * fraction)))
    return float(np.mean([series[ep] for ep in episodes[-window:]]))


def episodes_to_threshold(table: MetricsTable, threshold=0.9) -> float:
    """First episode whose agent-averaged return reaches the threshold (inf if never)."""
    series = table.per_episode_return()
    for ep in sorted(series):
        if series[ep] >= threshold:
            return float(ep)
    return float("inf")


AGGREGATE_HEADER = ("episode", "return_mean", "return_min", "return_max",
                    "reward_mean", "reward_min", "reward_max")


def aggregate(tables) -> list:
    """Per-episode mean/min/max across seeds (the shaded-curve data)."""
    returns = [t.per_episode_return() for t in tables]
    rewards = [t.per_episode_reward() for t in tables]
    episodes = sorted(set.intersection(*(set(r) for r in returns)))
    rows = []
    for ep in episodes:
        rs = [r[ep] for r in returns]
        ws = [w[ep] for w in rewards]
        rows.append((ep, float(np.mean(rs)), float(np.min(rs)), float(np.max(rs)),
                     float(np.mean(ws)), float(np.min(ws)), float(np.max(ws))))
    return rows


def write_aggregate(path, rows) -> None:
    lines = [",".join(AGGREGATE_HEADER)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
