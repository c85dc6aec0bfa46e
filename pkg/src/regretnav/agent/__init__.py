"""The regretful navigation policy network."""

from .config import DESK_MODEL, FULL_FIDELITY_MODEL, ModelConfig
from .network import (
    AgentState,
    EncodedInstruction,
    StepDecision,
    Walker,
    action_logits,
    action_select,
    co_ground,
    decode_step,
    encode_instruction,
    forward_embedding,
    initial_state,
    marker_deltas,
    marker_lookup,
    marker_update,
    progress_monitor,
    project_features,
    regret_module,
    step,
)
from .params import (
    CheckpointError,
    ParameterSet,
    init_params,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
)

__all__ = [
    "DESK_MODEL", "FULL_FIDELITY_MODEL", "AgentState", "CheckpointError", "EncodedInstruction",
    "ModelConfig", "ParameterSet", "StepDecision", "Walker", "action_logits", "action_select",
    "co_ground", "decode_step", "encode_instruction", "forward_embedding", "init_params",
    "initial_state", "load_checkpoint", "marker_deltas", "marker_lookup", "marker_update",
    "param_shapes", "progress_monitor", "project_features", "regret_module", "save_checkpoint",
    "step",
]
