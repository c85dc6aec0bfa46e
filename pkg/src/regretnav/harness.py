"""Experiment driver: dataset generation, training, evaluation, ablations.

Every command takes an :class:`ExperimentSpec`.  Outputs land in
``spec.output`` (resolved against ``$REGRETNAV_OUTPUT`` when relative) and
each command writes a copy of its spec beside its own outputs, so any
stage can be repeated from that file.

Layout of an output directory::

    data/spec.json, data/graphs.json, data/episodes_<split>.json
    train/spec.json, train/checkpoint.json, train/curves.jsonl
    eval/spec.json, eval/report.jsonl, eval/report.txt, eval/trajectories.jsonl
    ablate/spec.json, ablate/ablation.jsonl, ablate/ablation.txt
    ablate/<regime>-<variant>-s<seed>/{checkpoint.json, curves.jsonl, eval.jsonl}
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from .env import DESK, FULL_FIDELITY, DatasetParams, build_dataset, load_dataset, save_dataset
from .metrics import episode_record, summarize
from .train import NumericalError, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

OUTPUT_ENV = "REGRETNAV_OUTPUT"
FEATURE_PRESETS = {"desk": DESK, "full": FULL_FIDELITY}
VARIANTS = {
    "baseline": dict(regret=False, marker=False),
    "regret": dict(regret=True, marker=False),
    "marker": dict(regret=False, marker=True),
    "full": dict(regret=True, marker=True),
}
REGIMES = {"clean": "train", "noisy": "train_noisy"}
SUMMARY_KEYS = ("NE", "SR", "OSR", "SPL", "ONE", "fail_rollback_frac", "rollback_per_step")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class AblationPlan:
    variants: tuple = ("baseline", "regret", "marker", "full")
    seeds: tuple = (0, 1, 2, 3, 4)
    regimes: tuple = ("clean", "noisy")
    # the noisy regime only trains these variants
    noisy_variants: tuple = ("baseline", "full")
    eval_splits: tuple = ("seen", "unseen", "unseen_noisy")
    blocked_variants: tuple = ("full",)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) for k, v in d.items()})


@dataclass(frozen=True)
class ExperimentSpec:
    seed: int = 0
    output: str = "run"
    features: str = "desk"
    variant: str = "full"
    block_rollback: bool = False
    dataset: DatasetParams = field(default_factory=DatasetParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_splits: tuple = ("seen", "unseen", "unseen_noisy")
    ablation: AblationPlan = field(default_factory=AblationPlan)

    def __post_init__(self):
        if self.features not in FEATURE_PRESETS:
            raise ConfigError(f"unknown feature preset {self.features!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        fc = FEATURE_PRESETS[self.features]
        if self.dataset.graph.d_app != fc.d_app:
            raise ConfigError(f"graph appearance dim {self.dataset.graph.d_app} != preset {fc.d_app}")
        if self.model.feature_dim != fc.dim:
            raise ConfigError(f"model feature_dim {self.model.feature_dim} != preset input dim {fc.dim}")
        for v in self.ablation.variants + self.ablation.noisy_variants + self.ablation.blocked_variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown ablation variant {v!r}")
        for r in self.ablation.regimes:
            if r not in REGIMES:
                raise ConfigError(f"unknown training regime {r!r}")

    @property
    def feature_config(self):
        return FEATURE_PRESETS[self.features]

    def model_for(self, variant=None):
        return self.model.variant(**VARIANTS[variant or self.variant])

    def output_dir(self):
        out = Path(self.output)
        if not out.is_absolute():
            out = Path(os.environ.get(OUTPUT_ENV, ".")) / out
        return out

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown spec fields {sorted(unknown)}")
        try:
            if "dataset" in d:
                d["dataset"] = DatasetParams.from_dict(d["dataset"])
            if "model" in d:
                d["model"] = ModelConfig.from_dict(d["model"])
            if "train" in d:
                d["train"] = TrainConfig.from_dict(d["train"])
            if "ablation" in d:
                d["ablation"] = AblationPlan.from_dict(d["ablation"])
            if "eval_splits" in d:
                d["eval_splits"] = tuple(d["eval_splits"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read spec {path}: {e}") from e

    def override(self, assignments):
        """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
        d = self.to_dict()
        for a in assignments:
            key, sep, raw = a.partition("=")
            if not sep:
                raise ConfigError(f"override {a!r} is not key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = d
            *path, leaf = key.split(".")
            for p in path:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"unknown spec section {p!r} in {key!r}")
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown spec field {key!r}")
            node[leaf] = value
        return ExperimentSpec.from_dict(d)


# -- small io helpers ----------------------------------------------------------------

def _jsonl(records):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _write_new(path, text):
    """Write ``text`` unless ``path`` already holds different content."""
    path = Path(path)
    if path.exists():
        if path.read_text() != text:
            raise ConfigError(f"{path} exists with different content; refusing to overwrite")
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_spec(spec, directory, replace_existing=False):
    path = directory / "spec.json"
    if replace_existing:
        directory.mkdir(parents=True, exist_ok=True)
        path.write_text(spec.to_json())
    else:
        _write_new(path, spec.to_json())


def format_table(rows, columns):
    """Aligned plain-text table; floats get three decimals."""
    def cell(v):
        if isinstance(v, float):
            return f"{v:.3f}"
        return str(v)
    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(b, widths)))
              for b in body]
    return "\n".join(lines) + "\n"


def _dataset_dir(spec):
    return spec.output_dir() / "data"


def _load_data(spec):
    d = _dataset_dir(spec)
    if not (d / "graphs.json").exists():
        raise ConfigError(f"no dataset in {d}; run gen-env first")
    made_by = ExperimentSpec.load(d / "spec.json")
    if made_by.dataset != spec.dataset or made_by.seed != spec.seed:
        raise ConfigError(f"dataset in {d} was generated from different dataset params or seed")
    return load_dataset(d)


# -- commands --------------------------------------------------------------------------------

def cmd_gen_env(spec):
    """Generate and write every split.  Re-running with the same spec is a no-op."""
    target = _dataset_dir(spec)
    if (target / "spec.json").exists():
        made_by = ExperimentSpec.load(target / "spec.json")
        if made_by.dataset != spec.dataset or made_by.seed != spec.seed:
            raise ConfigError(f"{target} holds a dataset from different params or seed; "
                              "choose another output directory")
    else:
        _write_spec(spec, target)
    ds = build_dataset(spec.dataset, spec.seed)
    staging = target.with_name(target.name + ".staging")
    save_dataset(ds, staging)
    for f in sorted(staging.iterdir()):
        _write_new(target / f.name, f.read_text())
        f.unlink()
    staging.rmdir()
    counts = {k: len(v) for k, v in ds.splits.items()}
    log.info("dataset written to %s: %s", target, counts)
    return counts


def _train_one(spec, model_cfg, train_cfg, data, run_dir, on_record=None):
    ckpt = run_dir / "checkpoint.json"
    curves = run_dir / "curves.jsonl"
    if ckpt.exists() and curves.exists():
        params, _ = load_checkpoint(ckpt, expect_cfg=model_cfg)
        return params, [json.loads(l) for l in curves.read_text().splitlines()]
    start = time.perf_counter()
    best, records, _ = train(model_cfg, train_cfg, data.splits, spec.feature_config, on_record=on_record)
    run_dir.mkdir(parents=True, exist_ok=True)
    # wall time is kept apart from the curves so those stay byte-reproducible
    (run_dir / "timing.json").write_text(json.dumps({"train_seconds": time.perf_counter() - start}) + "\n")
    _write_new(curves, _jsonl(records))
    save_checkpoint(best, ckpt, extra={"best_epoch": records[-1]["epoch"], "seed": train_cfg.seed})
    return best, records


def cmd_train(spec, on_record=None):
    data = _load_data(spec)
    run_dir = spec.output_dir() / "train"
    if (run_dir / "checkpoint.json").exists():
        raise ConfigError(f"{run_dir / 'checkpoint.json'} exists; refusing to overwrite")
    _write_spec(spec, run_dir, replace_existing=True)
    cfg = replace(spec.train, seed=spec.seed)
    _, records = _train_one(spec, spec.model_for(), cfg, data, run_dir, on_record)
    return records


def evaluation_records(params, data, splits, features, block_rollback=False, trajectories=False):
    """Per-episode and summary records for every split, plus optional trajectory dumps."""
    records, dumps, summaries = [], [], {}
    for split in splits:
        if split not in data.splits:
            raise ConfigError(f"dataset has no split {split!r}")
        results = evaluate(params, data.splits[split], features, block_rollback=block_rollback,
                           keep_trace=trajectories)
        for r in results:
            records.append({"kind": "episode", "split": split, **episode_record(r)})
            if trajectories:
                d = r.to_dict()
                d["split"] = split
                d["actions"] = [int(a) for a in r.actions]
                d["probs"] = [np.round(s["probs"], 6).tolist() for s in r.trace]
                d["alpha_fr"] = [np.round(s["alpha_fr"], 6).tolist() for s in r.trace]
                d["rollback"] = [s["rollback"] for s in r.trace]
                dumps.append(d)
        s = summarize(results)
        summaries[split] = s
        records.append({"kind": "summary", "split": split, **s})
    return records, dumps, summaries


def cmd_eval(spec, checkpoint=None, trajectories=False):
    out = spec.output_dir()
    data = _load_data(spec)
    path = Path(checkpoint) if checkpoint else out / "train" / "checkpoint.json"
    try:
        params, _ = load_checkpoint(path)
    except (OSError, json.JSONDecodeError, CheckpointError) as e:
        raise ConfigError(f"cannot load checkpoint {path}: {e}") from e
    if params.cfg.feature_dim != spec.feature_config.dim:
        raise ConfigError("checkpoint feature width does not match the spec's feature preset")
    records, dumps, summaries = evaluation_records(params, data, spec.eval_splits, spec.feature_config,
                                                   spec.block_rollback, trajectories)
    ev = out / "eval"
    _write_spec(spec, ev, replace_existing=True)
    (ev / "report.jsonl").write_text(_jsonl(records))
    rows = [{"split": k, **v} for k, v in summaries.items()]
    (ev / "report.txt").write_text(format_table(rows, ("split", "n") + SUMMARY_KEYS))
    if trajectories:
        (ev / "trajectories.jsonl").write_text(_jsonl(dumps))
    return summaries


def ablation_runs(spec):
    """(regime, variant, seed) triples the plan asks for, in run order."""
    plan = spec.ablation
    runs = []
    for regime in plan.regimes:
        variants = plan.variants if regime == "clean" else plan.noisy_variants
        for variant in variants:
            for seed in plan.seeds:
                runs.append((regime, variant, seed))
    return runs


def cmd_ablate(spec, on_run=None):
    """Train and evaluate every run in the plan; write one consolidated table.

    Finished runs (checkpoint and curves present) are reused, so an
    interrupted ablation resumes where it stopped.
    """
    data = _load_data(spec)
    root = spec.output_dir() / "ablate"
    _write_spec(spec, root)
    plan = spec.ablation
    rows = []
    for regime, variant, seed in ablation_runs(spec):
        run_dir = root / f"{regime}-{variant}-s{seed}"
        model_cfg = spec.model_for(variant)
        cfg = replace(spec.train, seed=seed, train_split=REGIMES[regime])
        params, curves = _train_one(spec, model_cfg, cfg, data, run_dir)
        blocked = [False] + ([True] if regime == "clean" and variant in plan.blocked_variants else [])
        for block in blocked:
            eval_file = run_dir / ("eval_blocked.jsonl" if block else "eval.jsonl")
            if eval_file.exists():
                records = [json.loads(l) for l in eval_file.read_text().splitlines()]
            else:
                records, _, _ = evaluation_records(params, data, plan.eval_splits, spec.feature_config, block)
                eval_file.write_text(_jsonl(records))
            for r in records:
                if r["kind"] != "summary":
                    continue
                row = {"regime": regime, "variant": variant, "seed": seed, "blocked": block,
                       "regret": model_cfg.regret, "marker": model_cfg.marker,
                       "best_epoch": curves[-1]["epoch"], **r}
                row.pop("kind")
                rows.append(row)
                if on_run is not None:
                    on_run(row)
    (root / "ablation.jsonl").write_text(_jsonl(rows))
    table = median_table(rows)
    (root / "ablation.txt").write_text(format_table(table, ("regime", "variant", "blocked", "split", "seeds")
                                                    + SUMMARY_KEYS))
    return rows


def median_table(rows):
    """Median over seeds of every summary metric, one row per (regime, variant, blocked, split)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["regime"], r["variant"], r["blocked"], r["split"]), []).append(r)
    out = []
    for (regime, variant, blocked, split), rs in groups.items():
        row = {"regime": regime, "variant": variant, "blocked": blocked, "split": split, "seeds": len(rs)}
        for k in SUMMARY_KEYS:
            row[k] = float(np.median([r[k] for r in rs]))
        out.append(row)
    return out


COMMANDS = {"gen-env": cmd_gen_env, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}

__all__ = [
    "OUTPUT_ENV", "VARIANTS", "AblationPlan", "ConfigError", "ExperimentSpec", "NumericalError",
    "ablation_runs", "cmd_ablate", "cmd_eval", "cmd_gen_env", "cmd_train", "evaluation_records",
    "format_table", "median_table",
]
