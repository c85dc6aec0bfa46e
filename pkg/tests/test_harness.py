import json

import numpy as np
import pytest

from regretnav.cli import main
from regretnav.harness import (
    OUTPUT_ENV,
    ConfigError,
    ExperimentSpec,
    ablation_runs,
    cmd_eval,
    cmd_gen_env,
    cmd_train,
    format_table,
)

SMALL = [
    "--set", "dataset.n_train_graphs=3", "--set", "dataset.n_unseen_graphs=2",
    "--set", "dataset.train_per_graph=4", "--set", "dataset.seen_per_graph=2",
    "--set", "dataset.unseen_per_graph=3",
    "--set", "model.hidden=8", "--set", "model.embed_dim=8", "--set", "model.proj_dim=12",
    "--set", "model.max_steps=6", "--set", "train.batch_size=4",
]


def small_spec(out, **kw):
    spec = ExperimentSpec(output=str(out))
    spec = spec.override([a for a in SMALL if a != "--set"])
    return spec.override([f"{k}={json.dumps(v)}" for k, v in kw.items()]) if kw else spec


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    return tmp_path


def test_spec_roundtrip_and_overrides():
    spec = ExperimentSpec().override(["train.epochs=3", "model.hidden=16", "ablation.seeds=[1,2]"])
    assert spec.train.epochs == 3 and spec.model.hidden == 16 and spec.ablation.seeds == (1, 2)
    assert ExperimentSpec.from_dict(json.loads(spec.to_json())) == spec


@pytest.mark.parametrize("bad", [["model.nope=1"], ["nope=1"], ["features=\"huge\""], ["train.lam=2.0"],
                                 ["model.feature_dim=10"], ["ablation.variants=[\"x\"]"], ["noequals"]])
def test_bad_specs_are_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentSpec().override(bad)


def test_output_root_env(out_root):
    assert ExperimentSpec(output="x").output_dir() == out_root / "x"
    assert ExperimentSpec(output=str(out_root / "abs")).output_dir() == out_root / "abs"


def test_gen_env_is_byte_identical(out_root):
    assert main(["gen-env", "--out", "a", *SMALL]) == 0
    assert main(["gen-env", "--out", "b", *SMALL]) == 0
    files = sorted(p.name for p in (out_root / "a" / "data").iterdir())
    assert "episodes_unseen.json" in files
    for f in files:
        if f != "spec.json":
            assert (out_root / "a" / "data" / f).read_bytes() == (out_root / "b" / "data" / f).read_bytes()
    # regenerating in place is a no-op
    assert main(["gen-env", "--out", "a", *SMALL]) == 0


def test_gen_env_counts_and_disjoint_graphs(out_root):
    spec = small_spec("d")
    counts = cmd_gen_env(spec)
    assert counts["train"] == 12 and counts["seen"] == 6 and counts["unseen"] == 6
    eps = {s: json.loads((out_root / "d" / "data" / f"episodes_{s}.json").read_text())
           for s in ("train", "seen", "unseen")}
    assert len(eps["train"]) == 12
    train_g = {e["gid"] for e in eps["train"]}
    assert train_g == {e["gid"] for e in eps["seen"]}
    assert not train_g & {e["gid"] for e in eps["unseen"]}


def test_gen_env_refuses_different_dataset(out_root):
    assert main(["gen-env", "--out", "a", *SMALL]) == 0
    assert main(["gen-env", "--out", "a", *SMALL, "--seed", "3"]) == 1


def test_exit_codes(out_root, capsys):
    assert main(["train", "--out", "nodata", *SMALL]) == 1
    assert main(["eval", "--out", "nodata", *SMALL]) == 1
    assert main(["train", "--set", "model.bogus=1"]) == 1
    assert "configuration error" in capsys.readouterr().err


def test_non_finite_loss_exits_2(out_root, monkeypatch):
    import regretnav.train as tr

    assert main(["gen-env", "--out", "n", *SMALL]) == 0
    real = tr.loss

    def broken(buffer, lam=0.5, beta=0.01):
        total, parts = real(buffer, lam, beta)
        total.value[...] = np.nan
        return total, parts

    monkeypatch.setattr(tr, "loss", broken)
    assert main(["train", "--out", "n", *SMALL, "--epochs", "1"]) == 2


def test_train_then_eval(out_root):
    spec = small_spec("t", **{"train.epochs": 1})
    cmd_gen_env(spec)
    records = cmd_train(spec)
    assert records[-1]["metric"] == "best_SR"
    curves = (out_root / "t" / "train" / "curves.jsonl").read_text().splitlines()
    assert [json.loads(l) for l in curves] == records
    with pytest.raises(ConfigError):
        cmd_train(spec)  # checkpoint already written

    first = cmd_eval(spec, trajectories=True)
    report = (out_root / "t" / "eval" / "report.jsonl").read_bytes()
    second = cmd_eval(spec, trajectories=True)
    assert first == second
    assert (out_root / "t" / "eval" / "report.jsonl").read_bytes() == report

    for split, s in first.items():
        for key in ("NE", "SR", "OSR", "SPL", "ONE", "fail_rollback_frac", "rollback_per_step"):
            assert key in s
    # SR recomputed from the trajectory dump
    from regretnav.env import load_dataset
    from regretnav.metrics import TrajectoryResult, success

    data = load_dataset(out_root / "t" / "data")
    by_eid = {e.eid: e for eps in data.splits.values() for e in eps}
    dumps = [json.loads(l) for l in (out_root / "t" / "eval" / "trajectories.jsonl").read_text().splitlines()]
    for split, s in first.items():
        rows = [d for d in dumps if d["split"] == split]
        sr = np.mean([success(TrajectoryResult(episode=by_eid[d["eid"]], viewpoints=d["viewpoints"]))
                      for d in rows])
        assert sr == pytest.approx(s["SR"])
    assert "split" in (out_root / "t" / "eval" / "report.txt").read_text()


def test_ablation_plan_order():
    spec = ExperimentSpec().override(['ablation.seeds=[0,1]', 'ablation.regimes=["clean","noisy"]'])
    runs = ablation_runs(spec)
    assert runs[:2] == [("clean", "baseline", 0), ("clean", "baseline", 1)]
    assert {v for r, v, _ in runs if r == "noisy"} == {"baseline", "full"}
    assert len(runs) == 4 * 2 + 2 * 2


def test_ablate_flags_and_blocking(out_root):
    args = ["--out", "ab", *SMALL, "--epochs", "1", "--seeds", "0",
            "--set", 'ablation.variants=["baseline","full"]', "--set", 'ablation.regimes=["clean"]']
    assert main(["gen-env", *args[:2], *SMALL]) == 0
    assert main(["ablate", *args]) == 0
    rows = [json.loads(l) for l in (out_root / "ab" / "ablate" / "ablation.jsonl").read_text().splitlines()]
    base = [r for r in rows if r["variant"] == "baseline"]
    assert base and all(not r["regret"] and not r["marker"] for r in base)
    blocked = [r for r in rows if r["blocked"]]
    assert blocked and all(r["variant"] == "full" for r in blocked)
    ev = (out_root / "ab" / "ablate" / "clean-full-s0" / "eval_blocked.jsonl").read_text().splitlines()
    assert any(json.loads(l)["kind"] == "episode" for l in ev)
    table = (out_root / "ab" / "ablate" / "ablation.txt").read_text()
    assert "baseline" in table and "full" in table
    # resuming reuses finished runs and reproduces the table
    assert main(["ablate", *args]) == 0
    assert (out_root / "ab" / "ablate" / "ablation.txt").read_text() == table


def test_format_table_alignment():
    text = format_table([{"a": "x", "b": 0.5}, {"a": "long", "b": 12.25}], ("a", "b"))
    lines = text.splitlines()
    assert len({len(l) for l in lines}) == 1
    assert "12.250" in text
