"""Split generation and (de)serialisation of graphs and episodes.

Splits mirror the usual VLN layout: ``train`` episodes on training graphs,
``seen`` held-out episodes on the same graphs, ``unseen`` episodes on
graphs never used for training.  ``*_noisy`` splits carry the same
episodes with perturbed instructions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .episodes import Episode, make_episode, perturb, with_instruction
from .graph import GraphParams, NavGraph, generate_graph

SPLITS = ("train", "train_noisy", "seen", "unseen", "unseen_noisy")


@dataclass(frozen=True)
class DatasetParams:
    n_train_graphs: int = 40
    n_unseen_graphs: int = 8
    train_per_graph: int = 20
    seen_per_graph: int = 4
    unseen_per_graph: int = 20
    min_edges: int = 3
    max_edges: int = 7
    noise: float = 0.3
    graph: GraphParams = field(default_factory=GraphParams)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        g = dict(d.pop("graph", {}))
        for k in ("rows", "cols"):
            if k in g:
                g[k] = tuple(g[k])
        return cls(graph=GraphParams(**g), **d)


@dataclass
class Dataset:
    graphs: dict
    splits: dict
    params: DatasetParams

    def episodes(self, split):
        return self.splits[split]


def build_dataset(params, seed):
    """Deterministically generate every split from one integer seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    graph_seeds = rng.integers(0, 2 ** 31, size=params.n_train_graphs + params.n_unseen_graphs)
    graphs = {}
    train_ids, unseen_ids = [], []
    for i, s in enumerate(graph_seeds):
        unseen = i >= params.n_train_graphs
        gid = f"u{i - params.n_train_graphs:03d}" if unseen else f"t{i:03d}"
        graphs[gid] = generate_graph(int(s), params.graph, gid=gid)
        (unseen_ids if unseen else train_ids).append(gid)

    def sample(gids, per_graph, split, offset):
        out = []
        for gid in gids:
            for j in range(per_graph):
                ep_seed = [seed, offset, int(gid[1:]), j]
                out.append(make_episode(graphs[gid], ep_seed, 0.0, params.min_edges,
                                        params.max_edges, split=split, eid=f"{split}_{gid}_{j:03d}"))
        return out

    splits = {
        "train": sample(train_ids, params.train_per_graph, "train", 11),
        "seen": sample(train_ids, params.seen_per_graph, "seen", 12),
        "unseen": sample(unseen_ids, params.unseen_per_graph, "unseen", 13),
    }
    for name in ("train", "unseen"):
        noise_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, len(name))))
        splits[f"{name}_noisy"] = [
            with_instruction(ep, perturb(ep.instruction, params.noise, noise_rng), split=f"{name}_noisy")
            for ep in splits[name]]
    return Dataset(graphs=graphs, splits=splits, params=params)


def _dump(obj, path):
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def save_dataset(dataset, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _dump({"params": dataset.params.to_dict(),
           "graphs": [g.to_dict() for g in dataset.graphs.values()]}, directory / "graphs.json")
    for name, eps in dataset.splits.items():
        _dump([e.to_dict() for e in eps], directory / f"episodes_{name}.json")


def load_dataset(directory):
    directory = Path(directory)
    meta = json.loads((directory / "graphs.json").read_text())
    graphs = {d["gid"]: NavGraph.from_dict(d) for d in meta["graphs"]}
    splits = {}
    for name in SPLITS:
        f = directory / f"episodes_{name}.json"
        if f.exists():
            splits[name] = [Episode.from_dict(d, graphs) for d in json.loads(f.read_text())]
    return Dataset(graphs=graphs, splits=splits, params=DatasetParams.from_dict(meta["params"]))
