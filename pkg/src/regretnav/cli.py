"""Command line: ``python3 -m regretnav {gen-env,train,eval,ablate}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import (
    OUTPUT_ENV,
    ConfigError,
    ExperimentSpec,
    NumericalError,
    cmd_ablate,
    cmd_eval,
    cmd_gen_env,
    cmd_train,
    format_table,
    median_table,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def build_parser():
    p = argparse.ArgumentParser(prog="regretnav", description=__doc__.splitlines()[0],
                                epilog=f"Relative output paths resolve under ${OUTPUT_ENV} (default: cwd).")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--spec", help="experiment spec JSON; defaults are used when omitted")
        sp.add_argument("--out", help="output directory (spec field 'output')")
        sp.add_argument("--seed", type=int, help="master seed (spec field 'seed')")
        sp.add_argument("--features", choices=["desk", "full"], help="feature preset")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override any spec field, e.g. train.epochs=5 or model.hidden=64")
        return sp

    common(sub.add_parser("gen-env", help="generate graphs and episode splits"))
    t = common(sub.add_parser("train", help="train one agent"))
    t.add_argument("--variant", choices=["baseline", "regret", "marker", "full"])
    t.add_argument("--epochs", type=int)
    e = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    e.add_argument("--checkpoint", help="defaults to <out>/train/checkpoint.json")
    e.add_argument("--block-rollback", action="store_true", help="mask the return direction at inference")
    e.add_argument("--trajectories", action="store_true", help="also dump per-episode trajectories")
    a = common(sub.add_parser("ablate", help="run the variant x seed x regime matrix"))
    a.add_argument("--epochs", type=int)
    a.add_argument("--seeds", type=int, nargs="+")
    return p


def resolve_spec(args):
    spec = ExperimentSpec.load(args.spec) if args.spec else ExperimentSpec()
    overrides = list(args.overrides)
    for flag, key in (("out", "output"), ("seed", "seed"), ("features", "features"),
                      ("variant", "variant"), ("epochs", "train.epochs")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    if getattr(args, "block_rollback", False):
        overrides.append("block_rollback=true")
    if getattr(args, "seeds", None):
        overrides.append(f"ablation.seeds={list(args.seeds)}")
    return spec.override(overrides) if overrides else spec


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        spec = resolve_spec(args)
        if args.command == "gen-env":
            counts = cmd_gen_env(spec)
            print(" ".join(f"{k}={v}" for k, v in counts.items()))
        elif args.command == "train":
            records = cmd_train(spec)
            best = records[-1]
            print(f"best {best['split']} SR {best['value']:.3f} at epoch {best['epoch']}")
        elif args.command == "eval":
            cmd_eval(spec, args.checkpoint, args.trajectories)
            print((spec.output_dir() / "eval" / "report.txt").read_text(), end="")
        elif args.command == "ablate":
            rows = cmd_ablate(spec)
            print(format_table(median_table(rows), ("regime", "variant", "blocked", "split", "seeds",
                                                    "SR", "OSR", "SPL", "NE", "fail_rollback_frac")), end="")
    except ConfigError as e:
        print(f"regretnav: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"regretnav: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
