"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .benchmarks import PROBLEMS, get_problem
from .config import ConfigError, RunConfig, build_config, load_config, merge_dotted, parse_value
from .journal import JournalError, JournalWriter, make_header, read_journal, replay, write_traces
from .optimizer import ModelFailure, run
from .timing import timing_study

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _run_overrides(args) -> dict:
    values: dict = {}
    for key in ("problem", "budget", "parallelism", "seed", "repeats", "noise", "surrogate"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        merge_dotted(values, key.strip(), parse_value(text))
    return values


def _journal_path(out_dir: str, problem: str, seed: int) -> str:
    return os.path.join(out_dir, f"{problem}_seed{seed}.jsonl")


def cmd_run(args) -> int:
    overrides = _run_overrides(args)
    config: RunConfig = load_config(args.config, overrides) if args.config else build_config(overrides)
    get_problem(config.problem)
    os.makedirs(args.out, exist_ok=True)
    bests = []
    for r in range(config.repeats):
        seed = config.seed + r
        problem = get_problem(config.problem, config.noise, seed)
        path = _journal_path(args.out, config.problem, seed)
        with JournalWriter(path, make_header(config, seed)) as writer:
            records = run(problem, config.budget, config.parallelism, seed, config.engine, on_record=writer.write)
        incumbents = [rec["incumbent"] for rec in records]
        best = incumbents[-1]
        bests.append(best)
        steps = sorted({k for k in (10, 25, 50, 100, 200) if k < len(incumbents)} | {len(incumbents)})
        marks = [incumbents[k - 1] for k in steps]
        n_invalid = sum(rec["outcome"] == "invalid" for rec in records)
        print(f"seed {seed}: best {_num(best)} after {len(records)} evaluations "
              f"({n_invalid} invalid); trajectory {', '.join(_num(m) for m in marks)}; journal {path}")
    valid = [b for b in bests if b is not None]
    if len(bests) > 1 and valid:
        print(f"best over {len(bests)} runs: mean {np.mean(valid):.6g} +- {np.std(valid):.3g}"
              + ("" if len(valid) == len(bests) else f" ({len(bests) - len(valid)} runs without a valid point)"))
    return EXIT_OK


def _num(v) -> str:
    return "none" if v is None else f"{v:.6g}"


def cmd_timing(args) -> int:
    overrides: dict = {}
    if args.surrogate:
        overrides["surrogate"] = args.surrogate
    for item in args.set or []:
        key, _, text = item.partition("=")
        merge_dotted(overrides, key.strip(), parse_value(text))
    config = load_config(args.config, overrides) if args.config else build_config(overrides)
    engine = config.engine
    if args.D is not None:
        engine = replace(engine, network=replace(engine.network, layer_widths=(args.D,) * len(engine.network.layer_widths)))
    N_list = [int(n) for n in args.N.split(",")]
    try:
        rows, slope = timing_study(engine.surrogate, N_list, args.repeats, engine, seed=config.seed,
                                   csv_path=args.csv,
                                   on_row=lambda r: print(f"{r[0]},{r[1]},{r[2]},{r[3]!r}", flush=True))
    except MemoryError:
        print(f"error: out of memory building the {engine.surrogate} model; try a smaller N", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"log-log slope ({engine.surrogate}): {slope:.3f}")
    return EXIT_OK


def cmd_replay(args) -> int:
    journal = read_journal(args.journal)
    report = replay(journal)
    print(report.message)
    return EXIT_OK if report.ok else EXIT_RUNTIME


def cmd_trace(args) -> int:
    journal = read_journal(args.journal)
    prefix = args.prefix or os.path.splitext(args.journal)[0]
    for path in write_traces(journal, prefix):
        print(path)
    return EXIT_OK


def cmd_list_problems(args) -> int:
    for name in sorted(PROBLEMS):
        p = PROBLEMS[name]()
        bounds = ", ".join(f"[{d.lower:g}, {d.upper:g}]" for d in p.space.dims)
        print(f"{name}\tK={p.space.K}\toptimum={p.known_optimum:.6g}\tbounds {bounds}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dngo", description="Neural-basis Bayesian optimization harness.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="optimize a built-in problem and write journals")
    p.add_argument("--config", help="YAML config file; flags override its values")
    p.add_argument("--problem")
    p.add_argument("--budget", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int, help="runs with seeds seed, seed+1, ...")
    p.add_argument("--noise", type=float, help="sd of Gaussian observation noise")
    p.add_argument("--surrogate", choices=["dngo", "gp"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. network.epochs=500")
    p.add_argument("--out", default="journals", help="directory for journal files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("timing", help="per-suggestion time versus dataset size")
    p.add_argument("--surrogate", choices=["dngo", "gp"])
    p.add_argument("--N", default="250,500,1000,2000", help="comma-separated ascending sizes")
    p.add_argument("--D", type=int, help="hidden-layer width (basis dimension)")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--csv", help="write rows to this CSV file")
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser("replay", help="re-derive a journal's suggestions and report divergence")
    p.add_argument("journal")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("trace", help="export incumbent and value CSVs from a journal")
    p.add_argument("journal")
    p.add_argument("--prefix", help="output prefix (default: journal path without extension)")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("list-problems", help="list built-in problems")
    p.set_defaults(func=cmd_list_problems)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (JournalError, ModelFailure, ValueError, OSError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
