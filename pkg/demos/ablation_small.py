"""Train the baseline and the full agent briefly and compare them.

A scaled-down benchmark keeps this to a few minutes on one core; the
numbers are noisy at this size.  The full benchmark lives behind
``regretnav ablate``.

    python3 demos/ablation_small.py
"""

import dataclasses

from regretnav.agent import ModelConfig
from regretnav.env import DatasetParams, build_dataset
from regretnav.harness import VARIANTS
from regretnav.train import TrainConfig, evaluate, train
from regretnav.metrics import summarize

data = build_dataset(DatasetParams(n_train_graphs=20, n_unseen_graphs=6), seed=0)
print({k: len(v) for k, v in data.splits.items()})

base = ModelConfig()
tcfg = TrainConfig(epochs=10)
for variant in ("baseline", "full"):
    cfg = dataclasses.replace(base, **VARIANTS[variant])
    params, records, _ = train(cfg, tcfg, data.splits)
    for split in ("unseen", "unseen_noisy"):
        s = summarize(evaluate(params, data.splits[split]))
        print(f"{variant:<9s} {split:<13s} SR {s['SR']:.3f}  OSR {s['OSR']:.3f}  SPL {s['SPL']:.3f}  "
              f"failures with rollback {s['fail_rollback_frac']:.2f}")
