"""Procedural navigation graphs.

Graphs are jittered grids with random edge dropout and a few diagonal
shortcuts.  Every viewpoint carries a landmark id; the appearance feature
of a navigable direction is the latent vector of the landmark it leads to
plus Gaussian noise, so instruction tokens naming landmarks are groundable
in the visual features.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphParams:
    rows: tuple = (5, 7)
    cols: tuple = (5, 7)
    spacing: float = 2.3
    jitter: float = 0.12
    height_jitter: float = 0.2
    keep_prob: float = 0.8
    diagonal_prob: float = 0.12
    max_edge: float = 3.5
    k_max: int = 6
    n_landmarks: int = 12
    d_app: int = 64
    appearance_noise: float = 0.1
    world_seed: int = 0


def landmark_latents(params):
    """Latent appearance vector per landmark, shared by every graph of a world."""
    rng = np.random.default_rng([params.world_seed, 7919])
    return rng.normal(size=(params.n_landmarks, params.d_app))


@dataclass
class NavGraph:
    gid: str
    positions: np.ndarray                  # (N, 3) metres
    neighbors: list                        # sorted neighbour ids per viewpoint
    landmarks: np.ndarray                  # (N,) landmark id per viewpoint
    appearance: dict                       # (u, v) -> (d_app,) feature of direction u->v
    _paths: dict = field(default_factory=dict, repr=False)
    _dist: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return len(self.positions)

    def __contains__(self, v):
        return isinstance(v, (int, np.integer)) and 0 <= v < self.n

    def edge_length(self, u, v):
        return float(np.linalg.norm(self.positions[v] - self.positions[u]))

    def heading_elevation(self, u, v):
        """Heading (clockwise from +y) and elevation of the direction u -> v."""
        d = self.positions[v] - self.positions[u]
        return math.atan2(d[0], d[1]), math.atan2(d[2], math.hypot(d[0], d[1]))

    def edges(self):
        return [(u, v) for u in range(self.n) for v in self.neighbors[u] if u < v]

    def branching_factor(self):
        return float(np.mean([len(nb) for nb in self.neighbors]))

    def is_connected(self):
        seen, stack = {0}, [0]
        while stack:
            for v in self.neighbors[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n

    def distances(self):
        """All-pairs shortest path lengths (cached)."""
        if self._dist is None:
            self._dist = np.array([_dijkstra_all(self, s) for s in range(self.n)])
        return self._dist

    def distance(self, u, v):
        return float(self.distances()[u, v])

    def to_dict(self):
        return {
            "gid": self.gid,
            "positions": self.positions.tolist(),
            "neighbors": [list(map(int, nb)) for nb in self.neighbors],
            "landmarks": self.landmarks.tolist(),
            "appearance": [[int(u), int(v), self.appearance[(u, v)].tolist()]
                           for u in range(self.n) for v in self.neighbors[u]],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            gid=d["gid"],
            positions=np.array(d["positions"], dtype=float),
            neighbors=[list(nb) for nb in d["neighbors"]],
            landmarks=np.array(d["landmarks"], dtype=int),
            appearance={(u, v): np.array(f, dtype=float) for u, v, f in d["appearance"]},
        )


def _dijkstra_all(graph, source):
    dist = np.full(graph.n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v in graph.neighbors[u]:
            nd = d + graph.edge_length(u, v)
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def shortest_path(graph, u, v):
    """Minimum-length path from ``u`` to ``v`` and its length in metres.

    Among equal-length paths the lexicographically smallest viewpoint
    sequence wins.
    """
    if u not in graph or v not in graph:
        raise GraphError(f"unknown viewpoint in ({u}, {v}) for graph {graph.gid}")
    if (u, v) not in graph._paths:
        _paths_from(graph, u)
    if (u, v) not in graph._paths:
        raise GraphError(f"viewpoints {u} and {v} are disconnected in graph {graph.gid}")
    path, d = graph._paths[(u, v)]
    return list(path), d


def _paths_from(graph, u):
    # heap entries compare by (length, path) so the first settlement of a
    # node is its lexicographically smallest shortest path
    heap = [(0.0, (u,))]
    settled = set()
    while heap:
        d, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        graph._paths[(u, node)] = (path, d)
        for w in graph.neighbors[node]:
            if w not in settled:
                heapq.heappush(heap, (d + graph.edge_length(node, w), path + (w,)))


def _spanning_tree(rng, n, candidate_edges):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = set()
    for i in rng.permutation(len(candidate_edges)):
        a, b = candidate_edges[i]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.add((a, b))
    return tree


def generate_graph(seed, params=GraphParams(), gid=None, rows=None, cols=None):
    """Build a connected navigation graph deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    nr = rows if rows is not None else int(rng.integers(params.rows[0], params.rows[1] + 1))
    nc = cols if cols is not None else int(rng.integers(params.cols[0], params.cols[1] + 1))
    if nr < 1 or nc < 1 or nr * nc < 2:
        raise GraphError(f"degenerate graph size {nr}x{nc}")
    n = nr * nc
    grid = np.array([(c, r) for r in range(nr) for c in range(nc)], dtype=float)
    xy = grid * params.spacing + rng.uniform(-params.jitter, params.jitter, size=(n, 2))
    z = rng.uniform(-params.height_jitter, params.height_jitter, size=(n, 1))
    positions = np.hstack([xy, z])

    def node(r, c):
        return r * nc + c

    ortho = [(node(r, c), node(r, c + 1)) for r in range(nr) for c in range(nc - 1)]
    ortho += [(node(r, c), node(r + 1, c)) for r in range(nr - 1) for c in range(nc)]
    edges = _spanning_tree(rng, n, ortho)
    keep = rng.random(len(ortho)) < params.keep_prob
    edges |= {e for e, k in zip(ortho, keep) if k}

    adj = [set() for _ in range(n)]
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    diag = [(node(r, c), node(r + 1, c + s)) for r in range(nr - 1) for c in range(nc)
            for s in (-1, 1) if 0 <= c + s < nc]
    for (a, b), u in zip(diag, rng.random(len(diag))):
        if u >= params.diagonal_prob:
            continue
        if len(adj[a]) >= params.k_max or len(adj[b]) >= params.k_max:
            continue
        if np.linalg.norm(positions[a] - positions[b]) > params.max_edge:
            continue
        adj[a].add(b)
        adj[b].add(a)

    landmarks = rng.integers(0, params.n_landmarks, size=n)
    latents = landmark_latents(params)
    neighbors = [sorted(s) for s in adj]
    appearance = {}
    for a in range(n):
        for b in neighbors[a]:
            noise = rng.normal(scale=params.appearance_noise, size=params.d_app)
            appearance[(a, b)] = latents[landmarks[b]] + noise
    g = NavGraph(gid=gid if gid is not None else f"g{seed}", positions=positions,
                 neighbors=neighbors, landmarks=landmarks, appearance=appearance)
    if not g.is_connected():
        raise GraphError("generator produced a disconnected graph")
    return g
