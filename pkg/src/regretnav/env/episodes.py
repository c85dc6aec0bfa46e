"""Episodes: templated instructions, progress labels and expert actions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import NavGraph, shortest_path

VOCAB_SIZE = 64
PAD, UNK = 0, 1
WORDS = ["<pad>", "<unk>", "go", "to", "turn", "stop", "at",
         "left", "right", "straight", "around"]
# one synonym per function word, used only by the noisy regime
SYNONYMS = {"go": "walk", "to": "towards", "turn": "veer", "stop": "halt", "at": "by",
            "left": "port", "right": "starboard", "straight": "ahead", "around": "back"}
LANDMARK_BASE = 20
MAX_LANDMARKS = 22


def _build_vocab():
    vocab = {w: i for i, w in enumerate(WORDS)}
    for i, syn in enumerate(SYNONYMS.values()):
        vocab[syn] = len(WORDS) + i
    assert len(vocab) <= LANDMARK_BASE
    return vocab


VOCAB = _build_vocab()


def landmark_token(lm):
    return LANDMARK_BASE + int(lm)


def landmark_synonym(lm):
    return LANDMARK_BASE + MAX_LANDMARKS + int(lm)


def token_synonym(tok):
    if LANDMARK_BASE <= tok < LANDMARK_BASE + MAX_LANDMARKS:
        return landmark_synonym(tok - LANDMARK_BASE)
    word = next((w for w, i in VOCAB.items() if i == tok), None)
    syn = SYNONYMS.get(word)
    return VOCAB[syn] if syn is not None else tok


def relative_direction(prev_heading, heading):
    """Quantise a turn angle into straight / right / left / around."""
    d = (heading - prev_heading + math.pi) % (2 * math.pi) - math.pi
    if abs(d) < math.pi / 4:
        return "straight"
    if abs(d) > 3 * math.pi / 4:
        return "around"
    return "right" if d > 0 else "left"


def instruction_for_path(graph, path):
    """Clean landmark-and-action instruction for a viewpoint path.

    ``go to <lm>`` for the first edge, ``turn <dir> go to <lm>`` for each
    following edge, then ``stop at <lm>``.
    """
    toks = []
    heading = None
    for a, b in zip(path[:-1], path[1:]):
        h, _ = graph.heading_elevation(a, b)
        if heading is not None:
            toks += [VOCAB["turn"], VOCAB[relative_direction(heading, h)]]
        toks += [VOCAB["go"], VOCAB["to"], landmark_token(graph.landmarks[b])]
        heading = h
    toks += [VOCAB["stop"], VOCAB["at"], landmark_token(graph.landmarks[path[-1]])]
    return toks


def perturb(tokens, noise, rng):
    """Token dropout and synonym substitution, each with probability noise/2."""
    if noise <= 0:
        return list(tokens)
    out = []
    for tok in tokens:
        u = rng.random()
        if u < noise / 2:
            continue
        out.append(token_synonym(tok) if u < noise else tok)
    return out or [tokens[-1]]


@dataclass
class Episode:
    eid: str
    graph: NavGraph
    instruction: list
    start: int
    goal: int
    path: list
    split: str = "train"

    @property
    def gid(self):
        return self.graph.gid

    @property
    def shortest_distance(self):
        return self.graph.distance(self.start, self.goal)

    def to_dict(self):
        return {"eid": self.eid, "gid": self.graph.gid, "instruction": list(map(int, self.instruction)),
                "start": int(self.start), "goal": int(self.goal),
                "path": list(map(int, self.path)), "split": self.split}

    @classmethod
    def from_dict(cls, d, graphs):
        return cls(eid=d["eid"], graph=graphs[d["gid"]], instruction=list(d["instruction"]),
                   start=d["start"], goal=d["goal"], path=list(d["path"]), split=d["split"])


def make_episode(graph, seed, noise=0.0, min_edges=3, max_edges=7, split="train", eid=None):
    """Sample a start/goal pair whose shortest path has min..max edges."""
    rng = np.random.default_rng(seed)
    starts = rng.permutation(graph.n)
    for start in starts:
        goals = []
        for goal in range(graph.n):
            if goal == start:
                continue
            path, _ = shortest_path(graph, int(start), goal)
            if min_edges <= len(path) - 1 <= max_edges:
                goals.append((goal, path))
        if goals:
            goal, path = goals[int(rng.integers(len(goals)))]
            break
    else:
        raise ValueError(f"graph {graph.gid} has no path with {min_edges}-{max_edges} edges")
    tokens = perturb(instruction_for_path(graph, path), noise, rng)
    return Episode(eid=eid if eid is not None else f"{graph.gid}_e{seed}", graph=graph,
                   instruction=tokens, start=int(start), goal=int(goal), path=path, split=split)


def with_instruction(episode, tokens, split=None):
    return Episode(eid=episode.eid, graph=episode.graph, instruction=list(tokens),
                   start=episode.start, goal=episode.goal, path=list(episode.path),
                   split=split or episode.split)


def progress_target(episode, viewpoint):
    """Normalised progress ``(d0 - dt) / d0``; 1 at the goal, negative when
    the agent is farther from the goal than the start was."""
    d0 = episode.shortest_distance
    dt = episode.graph.distance(viewpoint, episode.goal)
    return (d0 - dt) / d0


def ground_truth_action(episode, viewpoint, observation=None):
    """Candidate slot of the expert action from ``viewpoint``.

    The expert follows a shortest path recomputed from the current
    viewpoint, so the label stays valid after the agent deviates.
    """
    if viewpoint == episode.goal:
        return 0
    path, _ = shortest_path(episode.graph, viewpoint, episode.goal)
    nxt = path[1]
    if observation is not None:
        return observation.targets.index(nxt)
    return 1 + episode.graph.neighbors[viewpoint].index(nxt)
