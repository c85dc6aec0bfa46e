"""Panoramic observations of navigable directions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import GraphError


@dataclass(frozen=True)
class FeatureConfig:
    d_app: int = 64
    orient_tile: int = 8
    k_max: int = 6

    @property
    def dim(self):
        return self.d_app + 4 * self.orient_tile

    @property
    def slots(self):
        return self.k_max + 1


DESK = FeatureConfig()
# appearance 2048 + orientation 4 * 32 = 2176 input features
FULL_FIDELITY = FeatureConfig(d_app=2048, orient_tile=32, k_max=6)


@dataclass
class PanoramaObservation:
    viewpoint: int
    targets: list          # slot -> target viewpoint id, None for the stop slot
    features: np.ndarray   # (k_max + 1, dim), stop and padding rows are zero
    mask: np.ndarray       # (k_max + 1,) valid slots

    @property
    def n_valid(self):
        return int(self.mask.sum())

    def slot_of(self, viewpoint):
        try:
            return self.targets.index(viewpoint)
        except ValueError:
            return None


def orientation_block(heading, elevation, tile):
    return np.tile([math.sin(heading), math.cos(heading),
                    math.sin(elevation), math.cos(elevation)], tile)


def observe(graph, viewpoint, config=DESK):
    """Stop slot at index 0, then one slot per neighbour in id order."""
    if viewpoint not in graph:
        raise GraphError(f"unknown viewpoint {viewpoint} in graph {graph.gid}")
    cache = graph.__dict__.setdefault("_obs_cache", {})
    key = (int(viewpoint), config)
    if key in cache:
        return cache[key]
    nbrs = graph.neighbors[viewpoint]
    if len(nbrs) > config.k_max:
        raise GraphError(f"viewpoint {viewpoint} has {len(nbrs)} > k_max neighbours")
    feats = np.zeros((config.slots, config.dim))
    mask = np.zeros(config.slots, dtype=bool)
    mask[0] = True
    targets = [None]
    for k, v in enumerate(nbrs, start=1):
        app = graph.appearance[(viewpoint, v)]
        if app.shape[0] != config.d_app:
            raise GraphError(f"appearance dim {app.shape[0]} != configured {config.d_app}")
        heading, elevation = graph.heading_elevation(viewpoint, v)
        feats[k] = np.concatenate([app, orientation_block(heading, elevation, config.orient_tile)])
        mask[k] = True
        targets.append(int(v))
    targets += [None] * (config.slots - len(targets))
    obs = PanoramaObservation(viewpoint=int(viewpoint), targets=targets, features=feats, mask=mask)
    cache[key] = obs
    return obs
