"""Trajectory scoring: NE, SR, OSR, SPL, ONE and rollback statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUCCESS_THRESHOLD = 3.0


@dataclass
class TrajectoryResult:
    episode: object
    viewpoints: list
    progress: list = field(default_factory=list)
    rollback_steps: int = 0
    steps: int = 0
    actions: list = field(default_factory=list)

    @property
    def final(self):
        return self.viewpoints[-1]

    @property
    def length(self):
        g = self.episode.graph
        return float(sum(g.edge_length(a, b) for a, b in zip(self.viewpoints[:-1], self.viewpoints[1:])))

    @property
    def has_rollback(self):
        return self.rollback_steps > 0

    def to_dict(self):
        return {"eid": self.episode.eid, "viewpoints": [int(v) for v in self.viewpoints],
                "progress": [float(p) for p in self.progress],
                "rollback_steps": int(self.rollback_steps), "steps": int(self.steps)}


def count_rollbacks(viewpoints):
    """Moves that return to the viewpoint occupied one step earlier."""
    return sum(1 for i in range(2, len(viewpoints)) if viewpoints[i] == viewpoints[i - 2])


def navigation_error(result):
    return result.episode.graph.distance(result.final, result.episode.goal)


def success(result, threshold=SUCCESS_THRESHOLD):
    if threshold <= 0:
        raise ValueError("success threshold must be positive")
    return int(navigation_error(result) < threshold)


def oracle_navigation_error(result):
    g, goal = result.episode.graph, result.episode.goal
    return min(g.distance(v, goal) for v in result.viewpoints)


def oracle_success(result, threshold=SUCCESS_THRESHOLD):
    return int(oracle_navigation_error(result) < threshold)


def spl(results, threshold=SUCCESS_THRESHOLD):
    """Mean of S_i * l_i / max(p_i, l_i)."""
    if not results:
        return 0.0
    total = 0.0
    for r in results:
        l = r.episode.shortest_distance
        if l <= 0:
            raise ValueError(f"episode {r.episode.eid} has zero shortest distance")
        total += success(r, threshold) * l / max(r.length, l)
    return total / len(results)


def rollback_stats(results, threshold=SUCCESS_THRESHOLD):
    failures = [r for r in results if not success(r, threshold)]
    steps = sum(r.steps for r in results)
    return {
        "fail_rollback_frac": (sum(r.has_rollback for r in failures) / len(failures)) if failures else 0.0,
        "rollback_per_step": (sum(r.rollback_steps for r in results) / steps) if steps else 0.0,
        "rollback_episode_frac": (sum(r.has_rollback for r in results) / len(results)) if results else 0.0,
    }


def summarize(results, threshold=SUCCESS_THRESHOLD):
    """Aggregate block for a batch of trajectories."""
    n = len(results)
    if n == 0:
        return {}
    out = {
        "n": n,
        "NE": float(np.mean([navigation_error(r) for r in results])),
        "SR": float(np.mean([success(r, threshold) for r in results])),
        "OSR": float(np.mean([oracle_success(r, threshold) for r in results])),
        "SPL": float(spl(results, threshold)),
        "ONE": float(np.mean([oracle_navigation_error(r) for r in results])),
        "length": float(np.mean([r.length for r in results])),
    }
    out.update(rollback_stats(results, threshold))
    return out


def episode_record(result, threshold=SUCCESS_THRESHOLD):
    return {
        "eid": result.episode.eid,
        "NE": navigation_error(result),
        "success": success(result, threshold),
        "ONE": oracle_navigation_error(result),
        "oracle_success": oracle_success(result, threshold),
        "length": result.length,
        "shortest": result.episode.shortest_distance,
        "rollback_steps": int(result.rollback_steps),
        "steps": int(result.steps),
    }
