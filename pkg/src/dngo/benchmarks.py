"""Benchmark objectives and synthetic constrained / noisy problems."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .space import ParameterSpace

INVALID = None

BRANIN_MIN = 0.39788735772973816
BRANIN_MINIMIZERS = ((-math.pi, 12.275), (math.pi, 2.275), (9.42477796076938, 2.475))
HARTMANN6_MIN = -3.3223680114155156
HARTMANN6_MINIMIZER = (0.20168952, 0.15001069, 0.47687398, 0.27533243, 0.31165162, 0.65730054)

_H6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H6_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
_H6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])

CONSTRAINT_CENTER = (math.pi, 2.275)
CONSTRAINT_RADIUS = 4.0

BRANIN_SPACE = ParameterSpace.from_bounds([(-5.0, 10.0), (0.0, 15.0)], ["x1", "x2"])
HARTMANN6_SPACE = ParameterSpace.from_bounds([(0.0, 1.0)] * 6, [f"x{i + 1}" for i in range(6)])


def _check_box(x, space: ParameterSpace):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != space.K:
        raise ValueError(f"expected {space.K} coordinates")
    if np.any(x < space.lower) or np.any(x > space.upper):
        raise ValueError(f"{x.tolist()} outside the benchmark domain")
    return x


def branin(x1, x2=None) -> float:
    """Branin-Hoo on x1 in [-5, 10], x2 in [0, 15]; three global minima of 0.397887."""
    x = _check_box(x1 if x2 is None else (x1, x2), BRANIN_SPACE)
    x1, x2 = x[..., 0], x[..., 1]
    b, c = 5.1 / (4 * math.pi ** 2), 5.0 / math.pi
    t = 1.0 / (8 * math.pi)
    val = (x2 - b * x1 ** 2 + c * x1 - 6.0) ** 2 + 10.0 * (1 - t) * np.cos(x1) + 10.0
    return float(val) if np.ndim(val) == 0 else val


def hartmann6(x) -> float:
    """Six-dimensional Hartmann function on the unit cube."""
    x = _check_box(x, HARTMANN6_SPACE)
    inner = np.sum(_H6_A * (x[..., None, :] - _H6_P) ** 2, axis=-1)
    val = -np.sum(_H6_ALPHA * np.exp(-inner), axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def in_constraint_disk(x) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(math.hypot(x[0] - CONSTRAINT_CENTER[0], x[1] - CONSTRAINT_CENTER[1]) <= CONSTRAINT_RADIUS)


def constrained_branin(x) -> Optional[float]:
    """Branin on a disk that keeps only the minimizer at (pi, 2.275); None outside."""
    x = _check_box(x, BRANIN_SPACE)
    return branin(x) if in_constraint_disk(x) else INVALID


@dataclass(frozen=True)
class Problem:
    """An objective over a box. The evaluator returns a float or None for invalid."""

    name: str
    space: ParameterSpace
    evaluator: Callable
    known_optimum: Optional[float] = None
    duration_model: Optional[Callable] = None
    # validity is a deterministic function of x
    noiseless_constraint: bool = False

    def __call__(self, x_native):
        return self.evaluator(np.asarray(x_native, dtype=float))

    def duration(self, x_native) -> float:
        return 1.0 if self.duration_model is None else float(self.duration_model(x_native))


class _NoisyEvaluator:
    """Adds N(0, sigma^2) noise; the draw for the i-th call is keyed by (seed, i)."""

    def __init__(self, base: Callable, sigma: float, seed: int):
        self.base = base
        self.sigma = float(sigma)
        self.seed = int(seed)
        self._calls = itertools.count()

    def __call__(self, x):
        i = next(self._calls)
        value = self.base(x)
        if value is None or self.sigma == 0.0:
            return value
        return value + self.sigma * np.random.default_rng([self.seed, i]).standard_normal()


def with_noise(problem: Problem, sigma_noise: float, seed: int = 0) -> Problem:
    if sigma_noise < 0:
        raise ValueError("noise level must be non-negative")
    if sigma_noise == 0:
        return problem
    return replace(problem, name=f"{problem.name}+noise{sigma_noise:g}",
                   evaluator=_NoisyEvaluator(problem.evaluator, sigma_noise, seed))


PROBLEMS = {
    "branin": lambda: Problem("branin", BRANIN_SPACE, branin, BRANIN_MIN),
    "hartmann6": lambda: Problem("hartmann6", HARTMANN6_SPACE, hartmann6, HARTMANN6_MIN),
    "constrained-branin": lambda: Problem("constrained-branin", BRANIN_SPACE, constrained_branin, BRANIN_MIN,
                                           noiseless_constraint=True),
}


def get_problem(name: str, noise: float = 0.0, seed: int = 0) -> Problem:
    try:
        problem = PROBLEMS[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return with_noise(problem, noise, seed)
