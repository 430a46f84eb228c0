"""Search spaces, observations and the unit-hypercube mapping.

All modelling happens in ``[0, 1]^K``; native coordinates only appear where
an objective is actually evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

_ROUND_TOL = 1e-12


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError(f"dimension {self.name!r}: bounds must be finite")
        if not self.lower < self.upper:
            raise ValueError(
                f"dimension {self.name!r}: lower ({self.lower}) must be < upper ({self.upper})"
            )


class ParameterSpace:
    """An ordered box of named continuous dimensions."""

    def __init__(self, dims: Sequence[Dimension | tuple]):
        dims = tuple(d if isinstance(d, Dimension) else Dimension(*d) for d in dims)
        if not dims:
            raise ValueError("a parameter space needs at least one dimension")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dimension names in {names}")
        self.dims = dims
        self.lower = np.array([d.lower for d in dims], dtype=float)
        self.upper = np.array([d.upper for d in dims], dtype=float)
        self.lower.flags.writeable = False
        self.upper.flags.writeable = False

    @classmethod
    def from_bounds(cls, bounds, names=None) -> "ParameterSpace":
        names = names or [f"x{i}" for i in range(len(bounds))]
        return cls([Dimension(n, float(lo), float(hi)) for n, (lo, hi) in zip(names, bounds)])

    @property
    def K(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def __len__(self):
        return self.K

    def __eq__(self, other):
        return isinstance(other, ParameterSpace) and self.dims == other.dims

    def __repr__(self):
        inner = ", ".join(f"{d.name}=[{d.lower}, {d.upper}]" for d in self.dims)
        return f"ParameterSpace({inner})"

    def to_dict(self) -> list[dict]:
        return [{"name": d.name, "lower": d.lower, "upper": d.upper} for d in self.dims]

    def scale_to_unit(self, x_native) -> np.ndarray:
        return scale_to_unit(self, x_native)

    def unscale(self, x_unit) -> np.ndarray:
        return unscale(self, x_unit)


def _check_shape(space: ParameterSpace, x: np.ndarray) -> None:
    if x.shape[-1:] != (space.K,):
        raise ValueError(f"expected {space.K} coordinates, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("coordinates must be finite")


def scale_to_unit(space: ParameterSpace, x_native) -> np.ndarray:
    """Affinely map native coordinates onto the unit hypercube.

    Out-of-bounds inputs are rejected, never clamped. Works row-wise on 2-D input.
    """
    x = np.asarray(x_native, dtype=float)
    _check_shape(space, x)
    width = space.upper - space.lower
    slack = _ROUND_TOL * np.maximum(width, 1.0)
    if np.any(x < space.lower - slack) or np.any(x > space.upper + slack):
        raise ValueError(f"point {x.tolist()} lies outside {space!r}")
    return np.clip((x - space.lower) / width, 0.0, 1.0)


def unscale(space: ParameterSpace, x_unit) -> np.ndarray:
    """Inverse of :func:`scale_to_unit`."""
    u = np.asarray(x_unit, dtype=float)
    _check_shape(space, u)
    if np.any(u < -_ROUND_TOL) or np.any(u > 1.0 + _ROUND_TOL):
        raise ValueError(f"unit coordinates {u.tolist()} outside [0, 1]")
    u = np.clip(u, 0.0, 1.0)
    return space.lower + u * (space.upper - space.lower)


@dataclass(frozen=True)
class Observation:
    """One completed evaluation. Invalid observations never carry a value."""

    x_unit: tuple
    y: Optional[float]
    valid: bool

    def __post_init__(self):
        x = tuple(float(v) for v in self.x_unit)
        object.__setattr__(self, "x_unit", x)
        if any(not (0.0 <= v <= 1.0) for v in x):
            raise ValueError(f"x_unit {x} outside the unit hypercube")
        if self.valid:
            if self.y is None or not math.isfinite(self.y):
                raise ValueError("a valid observation needs a finite value")
            object.__setattr__(self, "y", float(self.y))
        else:
            object.__setattr__(self, "y", None)

    @classmethod
    def invalid(cls, x_unit) -> "Observation":
        return cls(tuple(x_unit), None, False)


@dataclass
class Dataset:
    """Multiset of observations, partitioned into valid and invalid views."""

    K: int
    observations: list = field(default_factory=list)

    def add(self, obs: Observation) -> None:
        if len(obs.x_unit) != self.K:
            raise ValueError(f"observation has {len(obs.x_unit)} coordinates, expected {self.K}")
        self.observations.append(obs)

    def __len__(self):
        return len(self.observations)

    def __iter__(self) -> Iterator[Observation]:
        return iter(self.observations)

    @property
    def valid(self) -> list[Observation]:
        return [o for o in self.observations if o.valid]

    @property
    def invalid(self) -> list[Observation]:
        return [o for o in self.observations if not o.valid]

    @property
    def X(self) -> np.ndarray:
        return np.array([o.x_unit for o in self.observations], dtype=float).reshape(-1, self.K)

    @property
    def labels(self) -> np.ndarray:
        return np.array([o.valid for o in self.observations], dtype=float)

    @property
    def X_valid(self) -> np.ndarray:
        return np.array([o.x_unit for o in self.valid], dtype=float).reshape(-1, self.K)

    @property
    def y_valid(self) -> np.ndarray:
        return np.array([o.y for o in self.valid], dtype=float)

    def best(self) -> tuple[int, Observation]:
        """Index and observation with the lowest valid value; ties go to the earliest."""
        best_i, best = -1, None
        for i, o in enumerate(self.observations):
            if o.valid and (best is None or o.y < best.y):
                best_i, best = i, o
        if best is None:
            raise LookupError("no valid observations")
        return best_i, best
