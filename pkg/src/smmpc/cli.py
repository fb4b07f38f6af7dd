"""Command-line entry point.

    smmpc run --config exp.toml [--seed N] [--out DIR] [--jobs K]
    smmpc reproduce {1..6} [--runs N] [--seed N] [--out DIR] [--jobs K] [--strict]
    smmpc plot DIR [--format svg|png|pdf]

The master seed defaults to ``$SMMPC_SEED`` (then to the config's own seed, or 0).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from smmpc import __version__
from smmpc.config import ConfigError, dumps, load
from smmpc.experiments import DEFAULT_RUNS, reproduce as reproduce_example, run_groups
from smmpc.harness import summarize
from smmpc.plotting import PlotInputError, render
from smmpc.report import comparison_rows, format_table, write_results

log = logging.getLogger("smmpc")

EXIT_OK = 0
EXIT_CRITERION = 1
EXIT_USAGE = 2


def _env_seed() -> Optional[int]:
    raw = os.environ.get("SMMPC_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"SMMPC_SEED must be an integer, got {raw!r}")


def cmd_run(args) -> int:
    try:
        exp = load(args.config)
    except FileNotFoundError:
        print(f"error: cannot read {args.config}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else _env_seed()
    if seed is not None:
        exp = exp.with_seed(seed)
    try:
        scenarios = exp.scenarios()
    except ValueError as exc:
        print(f"error: sweep: {exc}", file=sys.stderr)
        return EXIT_USAGE
    configs = {s.label: s for s in scenarios}
    if len(configs) != len(scenarios):
        print("error: sweep produced duplicate labels", file=sys.stderr)
        return EXIT_USAGE
    groups = run_groups(configs, exp.runs, args.jobs, baseline=exp.scenario)
    summaries = {k: summarize(k, v) for k, v in groups.items()}
    meta = {"command": "run", "seed": exp.scenario.seed, "runs": exp.runs,
            "scenarios": {k: asdict(v) for k, v in configs.items()}}
    out = write_results(args.out, groups, summaries, meta)
    (out / "config.toml").write_text(dumps(exp))
    print(format_table(comparison_rows(summaries)))
    failed = sum(s.n_failed for s in summaries.values())
    if failed:
        print(f"{failed} run(s) failed; see summary.json", file=sys.stderr)
        return EXIT_CRITERION
    return EXIT_OK


def cmd_reproduce(args) -> int:
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    res = reproduce_example(args.example, args.runs, seed, args.jobs)
    meta = {
        "command": "reproduce",
        "example": res.example,
        "seed": res.seed,
        "runs": res.runs,
        "notes": res.notes,
        "criteria": [asdict(c) for c in res.criteria],
        "passed": res.passed,
    }
    write_results(args.out, res.groups, res.summaries, meta, res.trajectory_groups)
    print(f"Example {res.example}: {res.runs} run(s) per group, seed {res.seed}")
    print(format_table(comparison_rows(res.summaries)))
    for c in res.criteria:
        print(c.line())
    return EXIT_CRITERION if (args.strict and not res.passed) else EXIT_OK


def cmd_plot(args) -> int:
    try:
        paths = render(args.dir, args.format)
    except PlotInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for p in paths:
        print(p)
    return EXIT_OK if paths else EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smmpc", description="Signal matrix model predictive control experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the scenario(s) of a TOML experiment file")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", type=Path, default=Path("results"))
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("reproduce", help="run a built-in example preset")
    rp.add_argument("example", type=int, choices=sorted(DEFAULT_RUNS))
    rp.add_argument("--runs", type=int, default=None, help="runs per group (preset default if omitted)")
    rp.add_argument("--seed", type=int, default=None)
    rp.add_argument("--out", type=Path, default=None)
    rp.add_argument("--jobs", type=int, default=1)
    rp.add_argument("--strict", action="store_true", help="exit 1 when a criterion fails")
    rp.set_defaults(func=cmd_reproduce)

    pl = sub.add_parser("plot", help="render figures for a results directory")
    pl.add_argument("dir", type=Path)
    pl.add_argument("--format", default="svg", choices=("svg", "png", "pdf"))
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "reproduce":
        if args.runs is not None and args.runs < 1:
            print("error: --runs must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        if args.out is None:
            args.out = Path(f"results/example{args.example}")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
