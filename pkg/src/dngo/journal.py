"""Line-delimited JSON experiment journals, replay and trace export."""

from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import __version__
from .benchmarks import get_problem
from .config import ConfigError, RunConfig, build_config
from .optimizer import Optimizer

SCHEMA_VERSION = 1
RECORD_KEYS = ("iteration", "x_native", "x_unit", "outcome", "wall_time", "pending_count_at_suggest", "incumbent")
# excluded when comparing journals for determinism
VOLATILE_KEYS = ("wall_time", "created_at")


class JournalError(ValueError):
    """Unreadable or inconsistent journal; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class Journal:
    header: dict
    records: list = field(default_factory=list)

    @property
    def config(self) -> RunConfig:
        return build_config(self.header["config"])


def make_header(config: RunConfig, seed: int) -> dict:
    snapshot = config.to_dict()
    snapshot["seed"] = seed
    snapshot["repeats"] = 1
    return {
        "type": "header",
        "schema_version": SCHEMA_VERSION,
        "engine_version": __version__,
        "problem": config.problem,
        "seed": seed,
        "config": snapshot,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False, separators=(",", ":"))


class JournalWriter:
    """Appends one JSON object per line and flushes after each record."""

    def __init__(self, path: str, header: dict):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="\n")
        self._fh.write(_dumps(header) + "\n")
        self._fh.flush()

    def write(self, record: dict) -> None:
        self._fh.write(_dumps({k: record[k] for k in RECORD_KEYS}) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _check_record(rec, lineno: int) -> None:
    if not isinstance(rec, dict):
        raise JournalError("record is not an object", lineno)
    missing = [k for k in RECORD_KEYS if k not in rec]
    if missing:
        raise JournalError(f"record missing keys {missing}", lineno)
    if not (rec["outcome"] == "invalid" or isinstance(rec["outcome"], (int, float))):
        raise JournalError(f"outcome must be a number or 'invalid', got {rec['outcome']!r}", lineno)


def read_journal(path: str) -> Journal:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except UnicodeDecodeError as exc:
        raise JournalError(f"not UTF-8: {exc}") from exc
    if lines and lines[-1] == "":
        lines.pop()
    else:
        # a complete journal ends with a newline
        if lines:
            raise JournalError("truncated final record (no trailing newline)", len(lines))
    if not lines:
        raise JournalError("empty journal")
    parsed = []
    for i, text in enumerate(lines, start=1):
        try:
            parsed.append(json.loads(text))
        except json.JSONDecodeError as exc:
            raise JournalError(f"corrupted record: {exc.msg}", i) from None
    header = parsed[0]
    if not isinstance(header, dict) or header.get("type") != "header":
        raise JournalError("first line is not a journal header", 1)
    for key in ("schema_version", "engine_version", "problem", "seed", "config"):
        if key not in header:
            raise JournalError(f"header missing {key!r}", 1)
    for i, rec in enumerate(parsed[1:], start=2):
        _check_record(rec, i)
    return Journal(header, parsed[1:])


def comparable(journal: Journal) -> list:
    """Journal content with volatile fields removed, for determinism checks."""
    head = {k: v for k, v in journal.header.items() if k not in VOLATILE_KEYS}
    return [head] + [{k: v for k, v in r.items() if k not in VOLATILE_KEYS} for r in journal.records]


@dataclass
class ReplayReport:
    ok: bool
    checked: int
    message: str
    divergence_iteration: Optional[int] = None
    line: Optional[int] = None


def replay(journal: Journal, atol: float = 0.0) -> ReplayReport:
    """Re-derive every suggestion from the seed and the recorded outcomes.

    Records are in completion order, which fixes the interleaving of observe
    and suggest calls, so no evaluator or duration model is needed.
    """
    header = journal.header
    if header["schema_version"] != SCHEMA_VERSION:
        raise JournalError(f"schema version {header['schema_version']} is not {SCHEMA_VERSION}")
    if header["engine_version"] != __version__:
        raise JournalError(f"journal engine version {header['engine_version']} differs from {__version__}")
    try:
        config = journal.config
    except ConfigError as exc:
        raise JournalError(f"header config invalid: {exc}", 1) from exc
    space = get_problem(config.problem).space
    opt = Optimizer(space, config.engine, header["seed"])
    by_iter = {}
    for line, rec in enumerate(journal.records, start=2):
        if rec["iteration"] in by_iter:
            raise JournalError(f"duplicate iteration {rec['iteration']}", line)
        by_iter[rec["iteration"]] = (line, rec)

    checked = 0

    def check_next() -> Optional[ReplayReport]:
        nonlocal checked
        i = opt.n_suggested
        n_pending = len(opt.pending)
        opt.suggest()
        u = opt.pending[-1]
        if i not in by_iter:
            return ReplayReport(False, checked, f"suggestion {i} has no record", i)
        line, rec = by_iter[i]
        expected = np.asarray(rec["x_unit"], dtype=float)
        if expected.shape != u.shape or not np.allclose(u, expected, rtol=0.0, atol=atol):
            return ReplayReport(False, checked, f"divergence at suggestion {i}: replayed {u.tolist()}, "
                                f"journal {rec['x_unit']}", i, line)
        if rec["pending_count_at_suggest"] != n_pending:
            return ReplayReport(False, checked, f"pending count differs at suggestion {i}", i, line)
        checked += 1
        return None

    budget, parallelism = config.budget, config.parallelism
    if len(journal.records) != budget:
        raise JournalError(f"journal holds {len(journal.records)} records but the run budget is {budget}",
                           len(journal.records) + 1)
    for _ in range(min(parallelism, budget)):
        bad = check_next()
        if bad:
            return bad
    for rec in journal.records:
        outcome = None if rec["outcome"] == "invalid" else float(rec["outcome"])
        opt.observe(rec["x_unit"], outcome, unit=True)
        if opt.n_suggested < budget:
            bad = check_next()
            if bad:
                return bad
    return ReplayReport(True, checked, f"OK: {checked} suggestions reproduced")


def incumbent_trace(records: Iterable[dict]) -> list:
    """(iteration, value, incumbent) rows in completion order."""
    rows, best = [], None
    for rec in records:
        value = rec["outcome"]
        if value != "invalid" and (best is None or value < best):
            best = value
        rows.append((rec["iteration"], value, best))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_traces(journal: Journal, prefix: str) -> tuple:
    """Write ``<prefix>_incumbent.csv`` and ``<prefix>_values.csv``; returns both paths."""
    if not journal.records:
        raise JournalError("journal has no records to trace")
    rows = incumbent_trace(journal.records)
    inc_path, val_path = f"{prefix}_incumbent.csv", f"{prefix}_values.csv"
    with open(inc_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "iteration", "incumbent"])
        for step, (it, _, best) in enumerate(rows, start=1):
            w.writerow([step, it, _fmt(best) if best is not None else "invalid"])
    with open(val_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "iteration", "value"])
        for step, (it, value, _) in enumerate(rows, start=1):
            w.writerow([step, it, _fmt(value)])
    return inc_path, val_path
