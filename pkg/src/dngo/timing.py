"""Per-suggestion cost as a function of dataset size."""

from __future__ import annotations

import csv
import time
from dataclasses import replace
from typing import Iterable, Optional

import numpy as np

from .benchmarks import HARTMANN6_SPACE, hartmann6
from .optimizer import EngineConfig, Optimizer


def synthetic_optimizer(N: int, config: EngineConfig, seed: int = 0) -> Optimizer:
    """Optimizer holding N uniformly drawn Hartmann6 observations, past its initial design."""
    rng = np.random.default_rng([seed, N])
    U = rng.random((N, HARTMANN6_SPACE.K))
    opt = Optimizer(HARTMANN6_SPACE, config, seed)
    for u, y in zip(U, hartmann6(U)):
        opt.observe(u, float(y), unit=True)
    opt.n_design_issued = opt.n_init
    return opt


def time_suggestion(N: int, surrogate: str, config: EngineConfig, seed: int = 0) -> float:
    """Wall seconds for one suggestion; data generation is excluded."""
    opt = synthetic_optimizer(N, replace(config, surrogate=surrogate), seed)
    t0 = time.perf_counter()
    opt.suggest()
    return time.perf_counter() - t0


def loglog_slope(N, seconds) -> float:
    """Least-squares slope of log(seconds) against log(N)."""
    N, seconds = np.asarray(N, dtype=float), np.asarray(seconds, dtype=float)
    if len(np.unique(N)) < 2:
        raise ValueError("need at least two distinct N for a slope")
    return float(np.polyfit(np.log(N), np.log(seconds), 1)[0])


def timing_study(surrogate: str, N_list: Iterable[int], repeats: int = 1, config: EngineConfig = EngineConfig(),
                 seed: int = 0, csv_path: Optional[str] = None, on_row=None) -> tuple:
    """Returns (rows, slope). Rows are ``(surrogate, N, repeat, seconds)``.

    The slope is fitted to the per-N median time. Runs strictly sequentially.
    """
    N_list = [int(n) for n in N_list]
    if any(n < 1 for n in N_list) or N_list != sorted(N_list):
        raise ValueError("N list must be positive and ascending")
    rows = []
    writer = fh = None
    if csv_path is not None:
        fh = open(csv_path, "w", encoding="utf-8", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["surrogate", "N", "repeat", "seconds"])
    try:
        for N in N_list:
            for r in range(repeats):
                seconds = time_suggestion(N, surrogate, config, seed=seed + r)
                row = (surrogate, N, r, seconds)
                rows.append(row)
                if writer:
                    writer.writerow([surrogate, N, r, repr(seconds)])
                    fh.flush()
                if on_row:
                    on_row(row)
    finally:
        if fh:
            fh.close()
    med = [float(np.median([s for _, n, _, s in rows if n == N])) for N in N_list]
    slope = loglog_slope(N_list, med) if len(set(N_list)) > 1 else float("nan")
    return rows, slope
