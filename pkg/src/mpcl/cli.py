"""Command-line entry point: synth, train, eval, gradcheck, ablate, report.

Exit codes: 0 ok, 1 gradcheck failure, 2 configuration error, 3 data error,
4 numeric failure. Progress goes to stderr; tables go to stdout.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .config import PROFILES, TrainConfig, apply_overrides, describe_keys, load_config
from .data import GeneratorSpec, SampleArrays, generate_synthetic, load_dataset, make_splits, write_dataset
from .errors import (ConfigError, ContractError, DimensionError, EvaluationError, LabelError, ParameterError,
                     SchemaError, SplitError, TrainingError)
from .metrics import MetricReport, average_rank, format_table, metric_suite
from .numeric import corrupted_backward, make_rng
from .train import load_params, objective_grad_check, predict, run_protocol

log = logging.getLogger("mpcl")

MODULES = ("msaf", "prd", "pcl", "hsc")
EXIT_CODES = (
    ((ConfigError, ParameterError), 2),
    ((SchemaError, LabelError, SplitError, DimensionError, FileNotFoundError, NotADirectoryError), 3),
    ((EvaluationError, TrainingError, ContractError, FloatingPointError), 4),
)


def _ablate_overrides(items: Sequence[str] | None) -> list[str]:
    out = []
    for item in items or []:
        name, _, value = item.partition("=")
        name = name.strip()
        if name not in MODULES:
            raise ConfigError(f"--ablate expects one of {MODULES}, got {name!r}")
        if value.strip().lower() not in ("", "off", "false", "0", "no"):
            raise ConfigError(f"--ablate {item}: only '<module>=off' is meaningful")
        out.append(f"ablate.{name}=off")
    return out


def build_config(args) -> TrainConfig:
    cfg = load_config(args.config, args.profile)
    overrides = list(args.set or []) + _ablate_overrides(getattr(args, "ablate", None))
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return apply_overrides(cfg, overrides)


def _common(p: argparse.ArgumentParser, config_help: str = "YAML config file") -> None:
    p.add_argument("--config", help=config_help)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk", help="base hyperparameter profile")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")


def _protocol_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="dataset directory containing manifest.yaml")
    p.add_argument("--mode", choices=("dep", "loso"), default="dep", help="split protocol")
    p.add_argument("--out", default="runs", help="directory receiving run.<hash>/")
    p.add_argument("--jobs", type=int, default=1, help="folds trained in parallel")


# ------------------------------------------------------------------ subcommands


def cmd_synth(args) -> int:
    spec = GeneratorSpec.from_dict(yaml.safe_load(Path(args.config).read_text()) if args.config else None)
    manifest, samples = generate_synthetic(spec, make_rng(args.seed if args.seed is not None else 0), args.name)
    out = write_dataset(manifest, samples, args.out)
    print(out)
    return 0


def _print_protocol(result, title: str) -> None:
    rows = {f"fold {f.name}": f.report for f in result.folds}
    rows["mean"] = result.mean
    rows["uniform"] = result.baseline
    print(f"# {title}")
    print(format_table(rows))


def cmd_train(args) -> int:
    cfg = build_config(args)
    manifest, samples = load_dataset(args.data)
    plan = make_splits(samples, args.mode, cfg.seed)
    result = run_protocol(manifest, samples, plan, cfg, out_dir=args.out, jobs=args.jobs)
    _print_protocol(result, f"{result.run_dir} ({plan.mode}, {len(plan.folds)} folds)")
    return 0


def cmd_eval(args) -> int:
    run = Path(args.run)
    manifest, samples = load_dataset(args.data)
    arrays = SampleArrays.from_samples(samples, manifest.modalities)
    rows = {}
    for fold_dir in sorted(run.glob("fold-*"), key=lambda p: int(p.name.split("-")[1])):
        params, cfg = load_params(fold_dir / "checkpoint")
        idx = [int(x) for x in (fold_dir / "test_index").read_text().split()]
        test = arrays.take(idx)
        rows[fold_dir.name] = metric_suite(predict(params, manifest, cfg, test), test.labels)
    if not rows:
        raise FileNotFoundError(f"{run}: no fold-*/checkpoint found")
    rows["mean"] = MetricReport.mean_of(list(rows.values()))
    print(format_table(rows))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = build_config(args)
    if args.data:
        manifest, samples = load_dataset(args.data)
    else:
        manifest, samples = generate_synthetic(GeneratorSpec(), make_rng(cfg.seed))
    arrays = SampleArrays.from_samples(samples, manifest.modalities)
    with corrupted_backward(args.corrupt_op, args.corrupt_factor) if args.corrupt_op else contextlib.nullcontext():
        report = objective_grad_check(manifest, arrays, cfg, eps=args.eps, tol=args.tol, max_coords=args.coords,
                                      oracle=args.oracle)
    for line in report.lines():
        print(line)
    print(f"{'PASS' if report.passed else 'FAIL'} {len(report.slots)} slots, eps={args.eps}, tol={args.tol}, "
          f"oracle={args.oracle}")
    return 0 if report.passed else 1


def cmd_ablate(args) -> int:
    base = build_config(args)
    manifest, samples = load_dataset(args.data)
    plan = make_splits(samples, args.mode, base.seed)
    reports = {}
    for variant in ["full"] + [f"w/o {m}" for m in MODULES]:
        cfg = base if variant == "full" else apply_overrides(base, [f"ablate.{variant[4:]}=off"])
        log.info("variant %s", variant)
        result = run_protocol(manifest, samples, plan, cfg, out_dir=args.out, jobs=args.jobs)
        reports[variant] = result.mean
        print(f"{variant}: {result.run_dir}", file=sys.stderr)
    print(format_table(reports))
    print()
    _print_ranks(reports)
    return 0


def _print_ranks(reports) -> None:
    rows = average_rank(reports)
    print(f"{'':<16}" + "".join(f"{k:>14}" for k in rows[0].ranks) + f"{'avg rank':>14}")
    for r in rows:
        print(f"{r.name:<16}" + "".join(f"{v:>14.2f}" for v in r.ranks.values()) + f"{r.average:>14.2f}")


def _run_label(run: Path) -> str:
    cfg = yaml.safe_load((run / "config").read_text())
    off = [m for m in MODULES if not cfg.get("ablate", {}).get(m, True)]
    return run.name if not off else f"{run.name} w/o {','.join(off)}"


def cmd_report(args) -> int:
    runs = [Path(r) for r in args.runs]
    reports = {}
    for run in runs:
        if not (run / "metrics").is_file():
            raise FileNotFoundError(f"{run}: not a run directory (missing metrics)")
        reports[_run_label(run)] = MetricReport.from_text((run / "metrics").read_text())
    print(format_table(reports))
    print()
    _print_ranks(reports)
    for run in runs:
        corr = np.loadtxt(run / "label_correlation", ndmin=2)
        proto = yaml.safe_load((run / "protocol").read_text()) if (run / "protocol").is_file() else {}
        names = proto.get("emotions") or [f"e{i}" for i in range(corr.shape[0])]
        print(f"\n# label correlation {run.name}")
        print(f"{'':<14}" + "".join(f"{n[:8]:>9}" for n in names))
        for n, row in zip(names, corr):
            print(f"{n[:14]:<14}" + "".join(f"{v:>9.3f}" for v in row))
        if args.csv:
            out = Path(args.csv)
            out.mkdir(parents=True, exist_ok=True)
            lines = ["," + ",".join(names)] + [n + "," + ",".join(repr(float(v)) for v in row)
                                               for n, row in zip(names, corr)]
            (out / f"{run.name}.label_correlation.csv").write_text("\n".join(lines) + "\n")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(describe_keys())
    parser = argparse.ArgumentParser(
        prog="mpcl", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Mixed-emotion distribution learning with associative memories.",
        epilog=f"config keys (use with --set KEY=VALUE or a YAML --config):\n{keys}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    p.add_argument("--config", help="YAML generator spec (n_positive, n_negative, subjects, rho, ...)")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default="synthetic", help="dataset name recorded in the manifest")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train and evaluate under a split protocol",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=f"config keys:\n{keys}")
    _common(p)
    _protocol_flags(p)
    p.add_argument("--ablate", action="append", metavar="MODULE=off", help=f"disable one of {MODULES}")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate the fold checkpoints of a run")
    p.add_argument("run", help="run.<hash> directory")
    p.add_argument("data", help="dataset directory the run was trained on")
    p.add_argument("--seed", type=int, help="accepted for uniformity; evaluation is deterministic")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare reverse-mode gradients with central differences",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=f"config keys:\n{keys}")
    _common(p)
    p.add_argument("--data", help="dataset directory (default: synthetic benchmark from --seed)")
    p.add_argument("--ablate", action="append", metavar="MODULE=off", help=f"disable one of {MODULES}")
    p.add_argument("--eps", type=float, default=1e-5, help="central-difference step")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error per slot")
    p.add_argument("--coords", type=int, default=24, help="coordinates probed per slot (0 = all)")
    p.add_argument("--oracle", choices=("extended", "double"), default="extended",
                   help="precision of the finite-difference evaluations")
    p.add_argument("--corrupt-op", help=argparse.SUPPRESS)
    p.add_argument("--corrupt-factor", type=float, default=1.01, help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate", help="full model plus every single-module ablation",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=f"config keys:\n{keys}")
    _common(p)
    _protocol_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="tables, average ranks and correlation grids for run directories")
    p.add_argument("runs", nargs="+", help="run.<hash> directories")
    p.add_argument("--csv", metavar="DIR", help="also write correlation grids as CSV into DIR")
    p.add_argument("--seed", type=int, help="accepted for uniformity; reports are deterministic")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "coords", None) == 0:
        args.coords = None
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(message)s")
    try:
        return args.fn(args)
    except Exception as exc:
        for types, code in EXIT_CODES:
            if isinstance(exc, types):
                print(f"mpcl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
