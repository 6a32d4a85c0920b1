"""Command-line entry point: ``neural-dueling {run,sweep,check}``.

Every :class:`~neural_dueling.harness.ExperimentConfig` field is a flag.  A
flat JSON file given with ``--config`` may supply any field; explicit flags
override it.  Outputs go to ``--out`` or, failing that, to the directory named
by the ``NEURAL_DUELING_OUTPUT`` environment variable (default ``runs``).
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks
from .exceptions import NeuralDuelingError
from .harness import (
    NU_GRID,
    ExperimentConfig,
    aggregate,
    coverage_diagnostic,
    default_output_dir,
    run_experiment,
    write_outputs,
)

logger = logging.getLogger("neural_dueling")

_SKIP_FIELDS = {"output_path"}


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def _add_config_flags(parser):
    defaults = ExperimentConfig()
    group = parser.add_argument_group("experiment configuration")
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in _SKIP_FIELDS:
            continue
        flag = "--" + f.name.rstrip("_").replace("_", "-")
        default = getattr(defaults, f.name)
        if isinstance(default, bool):
            kind = _bool
        elif isinstance(default, int):
            kind = int
        elif isinstance(default, float) or f.name == "scale":
            kind = float
        else:
            kind = str
        aliases = [flag] if flag == "--" + f.name else [flag, "--" + f.name]
        group.add_argument(
            *aliases,
            dest=f.name,
            type=kind,
            default=argparse.SUPPRESS,
            help=f"default: {default}",
        )
    parser.add_argument("--config", type=Path, help="flat JSON file of configuration fields")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--plot", action="store_true", help="also write curves.svg")


def build_parser():
    parser = argparse.ArgumentParser(prog="neural-dueling", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    _add_config_flags(run)

    sweep = sub.add_parser("sweep", help="run a grid of experiments over nu, K or d")
    _add_config_flags(sweep)
    sweep.add_argument("--nu-grid", type=_float_list, help=f"e.g. {','.join(map(str, NU_GRID))}")
    sweep.add_argument("--K-grid", type=_int_list)
    sweep.add_argument("--d-grid", type=_int_list)

    check = sub.add_parser("check", help="run the numerical self-checks")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--coverage-T", type=int, default=500)
    check.add_argument("--coverage-reps", type=int, default=1)
    check.add_argument("--skip-coverage", action="store_true")
    return parser


def config_from_args(args):
    """Merge the JSON config file (if any) with explicitly given flags."""
    data = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise NeuralDuelingError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise NeuralDuelingError(f"{args.config}: expected a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    data.update({k: v for k, v in vars(args).items() if k in names})
    return ExperimentConfig.from_dict(data)


def _output_dir(args, cfg):
    if args.out is not None:
        return args.out
    if cfg.output_path:
        return Path(cfg.output_path)
    return default_output_dir() / f"{cfg.policy}-{cfg.function}-seed{cfg.seed}"


def _run_one(cfg, out, plot):
    traces = run_experiment(cfg)
    summary = aggregate(traces)
    write_outputs(traces, summary, cfg, out, plot=plot)
    return summary


def cmd_run(args):
    cfg = config_from_args(args)
    out = _output_dir(args, cfg)
    summary = _run_one(cfg, out, args.plot)
    print(f"final average regret {summary.final_avg:.4f} +- {summary.half_avg[-1]:.4f}")
    print(f"final weak regret    {summary.final_weak:.4f} +- {summary.half_weak[-1]:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_sweep(args):
    base = config_from_args(args)
    grids = [(n, g) for n, g in (("nu", args.nu_grid), ("K", args.K_grid), ("d", args.d_grid)) if g]
    if len(grids) != 1:
        raise NeuralDuelingError("sweep needs exactly one of --nu-grid, --K-grid, --d-grid")
    name, values = grids[0]
    out = _output_dir(args, base)
    rows = []
    for v in values:
        cfg = base.replace(**{name: v})
        summary = _run_one(cfg, out / f"{name}={v}", args.plot)
        rows.append({name: v, "final_average": summary.final_avg, "final_weak": summary.final_weak})
        print(f"{name}={v:<8g} average {summary.final_avg:12.4f}  weak {summary.final_weak:12.4f}")
    best = min(rows, key=lambda r: r["final_average"])
    print(f"lowest final average regret at {name}={best[name]:g}")
    with open(out / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump({"parameter": name, "results": rows, "best": best[name]}, fh, indent=1)
        fh.write("\n")
    return 0


def cmd_check(args):
    rng = np.random.default_rng(args.seed)
    results = [
        checks.gradient_check(rng),
        checks.sherman_morrison_check(rng),
        checks.init_null_check(rng),
    ]
    for r in results:
        print(r.line())
    if not args.skip_coverage:
        cfg = ExperimentConfig(
            policy="ndb-ucb", T=args.coverage_T, reps=args.coverage_reps, seed=args.seed, context_mode="theory"
        )
        # fixed nu has no coverage guarantee: report it without gating the exit code
        frac = coverage_diagnostic(cfg)
        print(f"INFO  band violation rate with fixed nu={cfg.nu:g}: {frac:.3f}  [calibration report]")
        frac = coverage_diagnostic(cfg.replace(nu_mode="theoretical"))
        cov = checks.CheckResult("band violation rate with theoretical nu", frac, 0.5, frac < 0.5)
        print(cov.line())
        results.append(cov)
    return 0 if all(r.passed for r in results) else 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "check": cmd_check}
    try:
        return handlers[args.command](args)
    except NeuralDuelingError as exc:
        # bad configuration values are usage errors, like unknown flags
        print(f"neural-dueling: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
