"""Command-line entry point: ``aircomp-fl {run,summarize,calibrate,validate}``."""
from __future__ import annotations

import argparse
import sys

from .baselines import calibrate_mse_threshold
from .config import ConfigError, SystemConfig, load_config, validate
from .engine import SCHEMES
from .harness import HarnessError, format_summary, run_experiment, summarize


def _load(args) -> SystemConfig:
    cfg = load_config(args.config) if args.config else SystemConfig()
    changes = {}
    for name in ("constraint", "rounds", "seed", "partition", "sizes", "mnist_dir"):
        v = getattr(args, name, None)
        if v is not None:
            key = {"constraint": "constraint_mode", "rounds": "T"}.get(name, name)
            changes[key] = v
    if getattr(args, "mnist_dir", None):
        changes["dataset"] = "mnist"
    return cfg.replace(**changes) if changes else cfg


def _check(cfg: SystemConfig) -> bool:
    ok = True
    for diag in validate(cfg):
        print(diag, file=sys.stderr)
        ok = ok and diag.level != "error"
    return ok


def cmd_run(args) -> int:
    cfg = _load(args)
    if not _check(cfg):
        return 2
    schemes = list(SCHEMES) if args.scheme == "all" else [args.scheme]
    csvs = run_experiment(cfg, schemes, args.out, timing=args.timing, dump_channels=args.dump_channels)
    for s, p in csvs.items():
        print(f"{s}: {p}")
    return 0


def cmd_summarize(args) -> int:
    print(format_summary(summarize(args.csv)))
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    if cfg.d is None:
        from .engine import build_setup
        cfg = build_setup(cfg).cfg
    tau = calibrate_mse_threshold(cfg, draws=args.draws)
    print(f"mse_threshold {tau:.17g}")
    return 0


def cmd_validate(args) -> int:
    cfg = _load(args)
    diags = validate(cfg)
    for d in diags:
        print(d)
    if not diags:
        print("ok")
    return 2 if any(d.level == "error" for d in diags) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aircomp-fl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", help="JSON config; keys are SystemConfig field names")
        p.add_argument("--constraint", choices=["individual", "sum"])
        p.add_argument("--rounds", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--partition", choices=["iid", "noniid"])
        p.add_argument("--sizes", choices=["balanced", "unbalanced"])
        p.add_argument("--mnist-dir", dest="mnist_dir", help="directory with the four MNIST IDX files")

    run = sub.add_parser("run", help="train one or all schemes and write metrics")
    config_flags(run)
    run.add_argument("--scheme", choices=list(SCHEMES) + ["all"], default="proposed")
    run.add_argument("--out", default="runs/latest")
    run.add_argument("--timing", action="store_true", help="record wall_ms (makes CSVs non-reproducible)")
    run.add_argument("--dump-channels", dest="dump_channels", action="store_true")
    run.set_defaults(func=cmd_run)

    summ = sub.add_parser("summarize", help="final-20-round averages of metrics CSVs")
    summ.add_argument("csv", nargs="+")
    summ.set_defaults(func=cmd_summarize)

    cal = sub.add_parser("calibrate", help="MSE threshold giving K/2 selected devices on average")
    config_flags(cal)
    cal.add_argument("--draws", type=int, default=2000)
    cal.set_defaults(func=cmd_calibrate)

    val = sub.add_parser("validate", help="print config diagnostics")
    config_flags(val)
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any module error ends the run with a diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
