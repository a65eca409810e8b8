"""Command-line front end: analyze event logs, simulate, and benchmark.

All primary outputs are files; stdout carries one machine-readable JSON
line describing the outcome (or the error), and progress goes to stderr.
Exit codes: 0 success, 2 bad input, 3 analysis degraded, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bench import EXPERIMENTS, SCENARIO2, TABLE1, BenchSpec, run_bench, scenario2_spec, table1_spec
from .estimators import write_curves_csv
from .metrics import BASELINE_METHODS, METHOD_MC, bootstrap_report
from .panel import PanelError, read_events_csv, write_events_csv
from .simulate import SimConfig, generate, read_config, with_overrides, write_truth

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGRADED = 3
EXIT_INTERNAL = 4

_CURVE_ORDER = ("learning", "effect", "metric_T", "metric_C", "survival_T", "survival_C")


class InputError(ValueError):
    """User-correctable problem with arguments or input files."""


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _progress(msg: str) -> None:
    sys.stderr.write(msg + "\n")
    sys.stderr.flush()


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return int(seed)
    generated = secrets.randbits(31)
    _progress(f"no --seed given; using generated seed {generated} (pass it back to reproduce)")
    return generated


def _parse_methods(text: str) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    allowed = (METHOD_MC,) + BASELINE_METHODS
    bad = [m for m in methods if m not in allowed]
    if bad:
        raise InputError(f"unknown methods {bad}; choose from {list(allowed)}")
    if not methods:
        raise InputError("at least one method is required")
    return methods


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longlift",
        description="Long-horizon treatment effect estimation for staggered-entry experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="estimate decision metrics from an event log CSV")
    pa.add_argument("--input", required=True, help="event log CSV (user_id,arm,entry_day,day,metric,active)")
    pa.add_argument("--output", required=True, help="analysis report JSON path")
    pa.add_argument("--curves", default=None,
                    help="curve CSV path (default: report path with .curves.csv)")
    pa.add_argument("--bootstrap", type=int, default=200, help="bootstrap replicates, min 50")
    pa.add_argument("--window", type=int, default=None,
                    help="short-term effect window in days (default: first week, capped at duration)")
    pa.add_argument("--horizon", type=int, default=None,
                    help="lifetime-value truncation day (default: experiment duration)")
    pa.add_argument("--duration", type=int, default=None,
                    help="experiment duration T (default: inferred from the log)")
    pa.add_argument("--methods", default="MC,CCD,DiD", help="comma-separated method list")
    pa.add_argument("--seed", type=int, default=None, help="bootstrap seed; generated if omitted")

    ps = sub.add_parser("simulate", help="generate a synthetic experiment event log")
    ps.add_argument("--config", default=None, help="simulation config JSON (defaults if omitted)")
    ps.add_argument("--output", required=True, help="event log CSV to write")
    ps.add_argument("--truth", default=None,
                    help="ground-truth JSON path (default: output path with .truth.json)")
    ps.add_argument("--users", type=int, default=None, help="override number of users")
    ps.add_argument("--duration", type=int, default=None, help="override experiment duration T")
    ps.add_argument("--seed", type=int, default=None, help="simulation seed; generated if omitted")

    pb = sub.add_parser("bench", help="run a canned benchmark experiment")
    pb.add_argument("--experiment", choices=EXPERIMENTS, default=None,
                    help="which canned experiment to run")
    pb.add_argument("--spec", default=None, help="bench spec JSON (overrides --experiment defaults)")
    pb.add_argument("--output", required=True, help="output directory for report and CSVs")
    pb.add_argument("--sims", type=int, default=None, help="override number of simulations")
    pb.add_argument("--users", type=int, default=None, help="override users per simulation")
    pb.add_argument("--bootstrap", type=int, default=None, help="override bootstrap replicates")
    pb.add_argument("--jobs", type=int, default=1, help="worker processes (0 = all cores)")
    pb.add_argument("--seed", type=int, default=None, help="benchmark seed; generated if omitted")
    return parser


# ---------------------------------------------------------------------------
# subcommands


def _cmd_analyze(args) -> int:
    try:
        records = read_events_csv(args.input)
    except FileNotFoundError as exc:
        raise InputError(f"cannot read {args.input}: {exc}") from exc
    except PanelError as exc:
        raise InputError(str(exc)) from exc
    methods = _parse_methods(args.methods)
    seed = _resolve_seed(args.seed)
    if args.bootstrap < 50:
        raise InputError(f"--bootstrap must be at least 50, got {args.bootstrap}")

    _progress(f"analyzing {args.input} with {args.bootstrap} bootstrap replicates ...")
    started = time.perf_counter()
    try:
        report = bootstrap_report(
            records,
            B=args.bootstrap,
            seed=seed,
            window=args.window,
            horizon=args.horizon,
            methods=methods,
            T=args.duration,
        )
    except (ValueError, PanelError) as exc:
        raise InputError(str(exc)) from exc
    _progress(f"analysis finished in {time.perf_counter() - started:.1f}s")

    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    curves_path = args.curves or str(out.with_suffix(".curves.csv"))
    labeled = [(name, report.curves[name]) for name in _CURVE_ORDER if name in report.curves]
    write_curves_csv(labeled, curves_path)

    code = EXIT_DEGRADED if report.unstable else EXIT_OK
    _emit({
        "command": "analyze",
        "output": str(out),
        "curves": curves_path,
        "seed": seed,
        "unstable": report.unstable,
        "n_failures": report.n_failures,
        "exit_code": code,
    })
    return code


def _cmd_simulate(args) -> int:
    if args.config is not None:
        try:
            config = read_config(args.config)
        except FileNotFoundError as exc:
            raise InputError(f"cannot read {args.config}: {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise InputError(f"bad config {args.config}: {exc}") from exc
    else:
        config = SimConfig()
    seed = args.seed if args.seed is not None or args.config is not None else _resolve_seed(None)
    try:
        config = with_overrides(config, n_users=args.users, T=args.duration, seed=seed)
    except TypeError as exc:
        raise InputError(str(exc)) from exc

    _progress(f"simulating {config.n_users} users over {config.T} days (seed {config.seed}) ...")
    try:
        records = generate(config)
    except ValueError as exc:
        raise InputError(str(exc)) from exc

    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_events_csv(records, out)
    truth_path = args.truth or str(out) + ".truth.json"
    write_truth(config, truth_path)
    _emit({
        "command": "simulate",
        "output": str(out),
        "truth": truth_path,
        "seed": config.seed,
        "n_users": config.n_users,
        "n_records": len(records),
        "exit_code": EXIT_OK,
    })
    return EXIT_OK


def _cmd_bench(args) -> int:
    if args.spec is not None:
        try:
            with open(args.spec, "r", encoding="utf-8") as fh:
                spec = BenchSpec.from_dict(json.load(fh))
        except FileNotFoundError as exc:
            raise InputError(f"cannot read {args.spec}: {exc}") from exc
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise InputError(f"bad bench spec {args.spec}: {exc}") from exc
    elif args.experiment == TABLE1:
        spec = table1_spec()
    elif args.experiment == SCENARIO2:
        spec = scenario2_spec()
    else:
        raise InputError("either --experiment or --spec is required")

    overrides = {}
    if args.sims is not None:
        overrides["n_sims"] = args.sims
    if args.users is not None:
        overrides["n_users"] = args.users
    if args.bootstrap is not None:
        overrides["bootstrap"] = args.bootstrap
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        spec = replace(spec, **overrides)

    _progress(
        f"running {spec.experiment}: {spec.n_sims} sims x {spec.n_users} users "
        f"(seed {spec.seed}, jobs {args.jobs}) ..."
    )
    started = time.perf_counter()
    report = run_bench(spec, jobs=args.jobs)
    elapsed = time.perf_counter() - started
    _progress(f"bench finished in {elapsed:.1f}s")

    paths = report.write(args.output)
    _emit({
        "command": "bench",
        "experiment": spec.experiment,
        "seed": spec.seed,
        "failures": report.failures,
        "exit_code": EXIT_OK,
        **paths,
    })
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse handles --help/--version (code 0) and bad usage (code 2)
        return int(exc.code or 0)

    handlers = {"analyze": _cmd_analyze, "simulate": _cmd_simulate, "bench": _cmd_bench}
    try:
        return handlers[args.command](args)
    except InputError as exc:
        _emit({"error": {"exit_code": EXIT_INPUT, "message": str(exc)}})
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001  last-resort: report, never traceback to stdout
        _emit({"error": {"exit_code": EXIT_INTERNAL, "message": f"{type(exc).__name__}: {exc}"}})
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
