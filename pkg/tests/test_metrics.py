import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regretnav.env import GraphParams, generate_graph, make_episode
from regretnav.metrics import (
    TrajectoryResult,
    count_rollbacks,
    navigation_error,
    oracle_navigation_error,
    rollback_stats,
    spl,
    success,
    summarize,
)

GRAPH = generate_graph(11, GraphParams(d_app=8, rows=(5, 5), cols=(5, 5)), gid="m")


def _walk(g, start, steps, rng):
    vps = [start]
    for _ in range(steps):
        vps.append(int(rng.choice(g.neighbors[vps[-1]])))
    return vps


def _results(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        ep = make_episode(GRAPH, seed * 1000 + i, min_edges=2, max_edges=5)
        vps = _walk(GRAPH, ep.start, int(rng.integers(0, 8)), rng)
        out.append(TrajectoryResult(episode=ep, viewpoints=vps, rollback_steps=count_rollbacks(vps),
                                    steps=len(vps)))
    return out


def _dijkstra_oracle(g, a, b):
    """Brute force: relax every edge |V| times."""
    d = np.full(g.n, np.inf)
    d[a] = 0.0
    for _ in range(g.n):
        for u in range(g.n):
            for v in g.neighbors[u]:
                d[v] = min(d[v], d[u] + g.edge_length(u, v))
    return d[b]


@pytest.mark.parametrize("seed", range(5))
def test_metrics_against_brute_force(seed):
    results = _results(12, seed)
    s = summarize(results)
    ne = [_dijkstra_oracle(GRAPH, r.final, r.episode.goal) for r in results]
    one = [min(_dijkstra_oracle(GRAPH, v, r.episode.goal) for v in r.viewpoints) for r in results]
    sr = [x < 3.0 for x in ne]
    lengths = [sum(GRAPH.edge_length(a, b) for a, b in zip(r.viewpoints, r.viewpoints[1:])) for r in results]
    spl_ref = np.mean([si * r.episode.shortest_distance / max(li, r.episode.shortest_distance)
                       for si, r, li in zip(sr, results, lengths)])
    assert s["NE"] == pytest.approx(np.mean(ne))
    assert s["ONE"] == pytest.approx(np.mean(one))
    assert s["SR"] == pytest.approx(np.mean(sr))
    assert s["OSR"] == pytest.approx(np.mean([x < 3.0 for x in one]))
    assert s["SPL"] == pytest.approx(spl_ref)
    assert s["ONE"] <= s["NE"] and s["SPL"] <= s["SR"] <= s["OSR"]


def test_success_threshold_is_strict():
    ep = make_episode(GRAPH, 3, min_edges=2, max_edges=5)
    r = TrajectoryResult(episode=ep, viewpoints=[ep.goal])
    assert success(r) == 1
    near = navigation_error(TrajectoryResult(episode=ep, viewpoints=[ep.path[-2]]))
    assert success(TrajectoryResult(episode=ep, viewpoints=[ep.path[-2]]), threshold=near) == 0
    assert success(TrajectoryResult(episode=ep, viewpoints=[ep.path[-2]]), threshold=near + 1e-9) == 1
    with pytest.raises(ValueError):
        success(r, threshold=0.0)


def test_shortest_path_trajectory_has_unit_spl():
    ep = make_episode(GRAPH, 4, min_edges=2, max_edges=5)
    r = TrajectoryResult(episode=ep, viewpoints=list(ep.path))
    assert spl([r]) == pytest.approx(1.0)
    assert oracle_navigation_error(r) == 0.0


@pytest.mark.parametrize("vps,expected", [
    ([0], 0), ([0, 1], 0), ([0, 1, 0], 1), ([0, 1, 0, 1], 2), ([0, 1, 2, 1, 0], 1), ([0, 1, 2, 0], 0),
])
def test_count_rollbacks(vps, expected):
    assert count_rollbacks(vps) == expected


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_rollback_stats_recount(seed):
    results = _results(10, seed)
    stats = rollback_stats(results)
    fails = [r for r in results if not success(r)]
    frac = np.mean([count_rollbacks(r.viewpoints) > 0 for r in fails]) if fails else 0.0
    assert stats["fail_rollback_frac"] == pytest.approx(frac)
    total_steps = sum(r.steps for r in results)
    assert stats["rollback_per_step"] == pytest.approx(sum(count_rollbacks(r.viewpoints) for r in results)
                                                       / total_steps)
    assert 0.0 <= stats["rollback_episode_frac"] <= 1.0


def test_summary_of_nothing_is_empty():
    assert summarize([]) == {}
    assert spl([]) == 0.0
