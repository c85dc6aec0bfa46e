"""Learnable tensors of the agent and the checkpoint format.

Checkpoints are JSON text: a version tag, the model config, and for every
tensor its shape and row-major values.  Batch-standardize running buffers
are stored alongside the parameters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..autodiff import RunningStats, parameter
from .config import ModelConfig

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def param_shapes(cfg):
    """Name -> shape for every learnable tensor under ``cfg``."""
    E, H, D, P, L = cfg.embed_dim, cfg.hidden, cfg.feature_dim, cfg.proj_dim, cfg.max_instruction_len
    shapes = {
        "embedding": (cfg.vocab_size, E),
        "enc_W": (E + H, 4 * H),
        "enc_b": (4 * H,),
        "g_bn1_gamma": (D,),
        "g_bn1_beta": (D,),
        "g_fc_W": (D, P),
        "g_fc_b": (P,),
        "g_bn2_gamma": (P,),
        "g_bn2_beta": (P,),
        "W_x": (H, H),
        "W_v": (H, P),
        "dec_W": (H + P + P + H, 4 * H),
        "dec_b": (4 * H,),
        "W_h": (H + P, H),
        "b_h": (H,),
        "W_pm": (L + H, 1),
        "b_pm": (1,),
        "W_a": (2 * H, P),
    }
    if cfg.regret:
        shapes["W_r"] = (1, 2)
        shapes["b_r"] = (2,)
    if cfg.uses_w_fr:
        shapes["W_fr"] = (P, cfg.scored_dim)
    return shapes


class ParameterSet:
    def __init__(self, cfg, tensors, stats):
        self.cfg = cfg
        self.tensors = tensors
        self.stats = stats

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def grads(self):
        return {k: t.grad for k, t in self.tensors.items()}

    def count(self):
        return sum(t.value.size for t in self.tensors.values())

    def copy(self):
        tensors = {k: parameter(t.value.copy(), name=k) for k, t in self.tensors.items()}
        stats = {}
        for k, s in self.stats.items():
            c = RunningStats(len(s.mean), s.momentum, s.eps)
            c.mean, c.var = s.mean.copy(), s.var.copy()
            stats[k] = c
        return ParameterSet(self.cfg, tensors, stats)

    def state_dict(self):
        out = {k: t.value for k, t in self.tensors.items()}
        for k, s in self.stats.items():
            out[f"{k}.running_mean"] = s.mean
            out[f"{k}.running_var"] = s.var
        return out


def init_params(cfg, rng):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name == "embedding":
            value = rng.normal(size=shape)
        elif name.endswith("gamma"):
            value = np.ones(shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        tensors[name] = parameter(value, name=name)
    H = cfg.hidden
    for lstm in ("enc_b", "dec_b"):
        tensors[lstm].value[H:2 * H] = 1.0
    stats = {"g_bn1": RunningStats(cfg.feature_dim), "g_bn2": RunningStats(cfg.proj_dim)}
    return ParameterSet(cfg, tensors, stats)


def save_checkpoint(params, path, extra=None):
    path = Path(path)
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": params.cfg.to_dict(),
        "tensors": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                    for k, v in params.state_dict().items()},
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
    tmp.replace(path)


def load_checkpoint(path, expect_cfg=None):
    """Load a checkpoint; shape mismatches against the config are rejected."""
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = ModelConfig.from_dict(payload["config"])
    if expect_cfg is not None and expect_cfg != cfg:
        raise CheckpointError("checkpoint config differs from the expected model config")
    params = init_params(cfg, np.random.default_rng(0))
    stored = payload["tensors"]
    expected = dict(param_shapes(cfg))
    for k, s in params.stats.items():
        expected[f"{k}.running_mean"] = s.mean.shape
        expected[f"{k}.running_var"] = s.var.shape
    missing = set(expected) - set(stored)
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors {sorted(missing)}")
    for name, shape in expected.items():
        entry = stored[name]
        if tuple(entry["shape"]) != tuple(shape):
            raise CheckpointError(f"{name}: stored shape {tuple(entry['shape'])} != expected {tuple(shape)}")
        values = np.array(entry["values"], dtype=float)
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{name}: {values.size} values for shape {tuple(shape)}")
        values = values.reshape(shape)
        if "." in name:
            layer, buf = name.split(".")
            setattr(params.stats[layer], "mean" if buf == "running_mean" else "var", values)
        else:
            params.tensors[name].value[...] = values
    return params, payload.get("extra", {})
