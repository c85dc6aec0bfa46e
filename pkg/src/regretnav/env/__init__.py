"""Procedural navigation environment: graphs, episodes, observations."""

from .dataset import SPLITS, Dataset, DatasetParams, build_dataset, load_dataset, save_dataset
from .episodes import (
    VOCAB,
    VOCAB_SIZE,
    Episode,
    ground_truth_action,
    instruction_for_path,
    landmark_token,
    make_episode,
    perturb,
    progress_target,
    with_instruction,
)
from .graph import GraphError, GraphParams, NavGraph, generate_graph, shortest_path
from .observe import DESK, FULL_FIDELITY, FeatureConfig, PanoramaObservation, observe

__all__ = [
    "DESK", "FULL_FIDELITY", "SPLITS", "VOCAB", "VOCAB_SIZE", "Dataset", "DatasetParams",
    "Episode", "FeatureConfig", "GraphError", "GraphParams", "NavGraph", "PanoramaObservation",
    "build_dataset", "generate_graph", "ground_truth_action", "instruction_for_path",
    "landmark_token", "load_dataset", "make_episode", "observe", "perturb", "progress_target",
    "save_dataset", "shortest_path", "with_instruction",
]
