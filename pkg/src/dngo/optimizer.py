"""Closed-loop suggest/observe engine and a simulated parallel runner."""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .acquisition import (AcquisitionConfig, AcquisitionContext, ObjectiveSample, maximize,
                          optimize_acquisition)
from .bayes_linear import (HyperPrior, RegressionHyperparams, SamplerError, fit_posterior,
                           slice_sample_hyperparams)
from .constraint import ConstraintHyperparams, fit_constraint, prob_valid
from .gp import gp_acquisition, gp_fit, median_distance_params
from .network import BasisNetwork, NetworkConfig, forward_features, train_map
from .space import Dataset, Observation, ParameterSpace, scale_to_unit, unscale

log = logging.getLogger(__name__)

SURROGATES = ("dngo", "gp")


@dataclass(frozen=True)
class SamplerConfig:
    burn_in: int = 50
    n_samples: int = 10
    thin: int = 2
    width: float = 1.0
    horseshoe_scale: float = 1.0
    center_std: float = 1.0

    def __post_init__(self):
        if self.burn_in < 0 or self.n_samples < 1 or self.thin < 1 or self.width <= 0:
            raise ValueError("invalid sampler settings")
        if not self.center_std > 0:
            raise ValueError("center_std must be positive")

    def prior(self) -> HyperPrior:
        return HyperPrior(horseshoe_scale=self.horseshoe_scale, c_std=self.center_std)


@dataclass(frozen=True)
class EngineConfig:
    network: NetworkConfig = NetworkConfig()
    sampler: SamplerConfig = SamplerConfig()
    acquisition: AcquisitionConfig = AcquisitionConfig()
    constraint: ConstraintHyperparams = ConstraintHyperparams()
    # None means 2 * K points
    initial_design: Optional[int] = None
    surrogate: str = "dngo"
    warm_start: bool = False

    def __post_init__(self):
        if self.surrogate not in SURROGATES:
            raise ValueError(f"surrogate must be one of {SURROGATES}")
        if self.initial_design is not None and self.initial_design < 1:
            raise ValueError("initial_design must be positive")


class ModelFailure(RuntimeError):
    """Surrogate fitting failed; carries the iteration for diagnostics."""


@dataclass
class DNGOModel:
    """Trained basis plus hyperparameter samples, on the standardized scale."""

    net: BasisNetwork
    samples: list
    y_mean: float
    y_std: float

    def standardize(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def predict(self, X):
        """Mean and variance in original units, mixed over hyperparameter samples."""
        from .bayes_linear import predict, prior_mean
        phi = forward_features(self.net, np.atleast_2d(X))
        mus, variances = [], []
        for s in self.samples:
            mu, var = predict(s.state, phi, prior_mean(s.theta, np.atleast_2d(X)))
            mus.append(mu)
            variances.append(var)
        mus, variances = np.array(mus), np.array(variances)
        mu = mus.mean(axis=0)
        var = (variances + mus ** 2).mean(axis=0) - mu ** 2
        return self.y_mean + self.y_std * mu, self.y_std ** 2 * var


def standardize(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(np.mean(y))
    std = float(np.std(y))
    if not std > 1e-12:
        std = 1.0
    return (y - mean) / std, mean, std


def fit_dngo(X, y, config: EngineConfig, rng, theta0: Optional[RegressionHyperparams] = None,
             init: Optional[BasisNetwork] = None) -> DNGOModel:
    """Train the basis on standardized targets and sample the regression hyperparameters."""
    X = np.asarray(X, dtype=float)
    ys, mean, std = standardize(np.asarray(y, dtype=float))
    net = train_map(config.network, X, ys, seed=rng, init=init)
    Phi = forward_features(net, X)
    theta0 = theta0 or RegressionHyperparams.default(X.shape[1])
    sc = config.sampler
    thetas = slice_sample_hyperparams(Phi, ys, X, theta0, sc.n_samples, sc.burn_in, seed=rng,
                                      thin=sc.thin, width=sc.width, prior=sc.prior())
    samples = [ObjectiveSample(th, fit_posterior(Phi, ys, th, X)) for th in thetas]
    return DNGOModel(net, samples, mean, std)


class Optimizer:
    """Owns the dataset, the pending set and the suggestion RNG stream.

    Each suggestion draws from a generator keyed by ``(seed, suggestion index)``
    so a run is reproducible from its seed and observation history alone.
    """

    def __init__(self, space: ParameterSpace, config: EngineConfig = EngineConfig(), seed: int = 0):
        self.space = space
        self.config = config
        self.seed = int(seed)
        self.dataset = Dataset(space.K)
        self.pending: list[np.ndarray] = []
        self.n_suggested = 0
        self.n_design_issued = 0
        self.n_init = config.initial_design or 2 * space.K
        self._design = qmc.Halton(d=space.K, scramble=True, seed=np.random.default_rng([self.seed, 2**31]))
        self._last_theta: Optional[RegressionHyperparams] = None
        self._last_net: Optional[BasisNetwork] = None
        self.last_model: Optional[DNGOModel] = None
        self.last_info: dict = {}

    @property
    def iteration(self) -> int:
        return self.n_suggested

    # -- observing -------------------------------------------------------

    def _pop_pending(self, u: np.ndarray) -> Optional[np.ndarray]:
        for i, p in enumerate(self.pending):
            if np.allclose(p, u, rtol=0.0, atol=1e-9):
                return self.pending.pop(i)
        return None

    def observe(self, x, outcome: Optional[float], unit: bool = False) -> None:
        """Record an outcome; ``None`` or a non-finite value marks the point invalid."""
        u = np.asarray(x, dtype=float) if unit else scale_to_unit(self.space, x)
        matched = self._pop_pending(u)
        if matched is None:
            log.info("observing a point that was never suggested: %s", np.round(u, 6).tolist())
        else:
            u = matched
        valid = outcome is not None and math.isfinite(outcome)
        self.dataset.add(Observation(tuple(u), float(outcome) if valid else None, valid))

    def best_observed(self) -> tuple[np.ndarray, float]:
        _, obs = self.dataset.best()
        return unscale(self.space, obs.x_unit), obs.y

    @property
    def f_best(self) -> Optional[float]:
        try:
            return self.dataset.best()[1].y
        except LookupError:
            return None

    # -- suggesting ------------------------------------------------------

    def _design_point(self) -> np.ndarray:
        self.n_design_issued += 1
        return self._design.random(1)[0]

    def suggest(self) -> np.ndarray:
        """Next point to evaluate, in native coordinates; it joins the pending set."""
        t0 = time.perf_counter()
        rng = np.random.default_rng([self.seed, self.n_suggested])
        if self.n_design_issued < self.n_init or not self.dataset.valid:
            u = self._design_point()
            kind = "design"
        else:
            try:
                u = self._model_suggestion(rng)
            except (SamplerError, FloatingPointError, np.linalg.LinAlgError) as exc:
                raise ModelFailure(f"suggestion {self.n_suggested} failed: {exc}") from exc
            kind = "model"
        self.pending.append(u)
        self.n_suggested += 1
        self.last_info = {"kind": kind, "seconds": time.perf_counter() - t0}
        return unscale(self.space, u)

    def _extra_candidates(self, rng) -> Optional[np.ndarray]:
        cfg = self.config.acquisition
        n = int(round(cfg.local_fraction * cfg.n_candidates))
        if n == 0 or not self.dataset.valid:
            return None
        _, best = self.dataset.best()
        x = np.asarray(best.x_unit)
        local = x + cfg.local_scale * rng.standard_normal((n, self.space.K))
        return np.vstack([x, np.clip(local, 0.0, 1.0)])

    def _model_suggestion(self, rng) -> np.ndarray:
        cfg = self.config
        has_invalid = len(self.dataset.valid) < len(self.dataset)
        pending = np.array(self.pending).reshape(-1, self.space.K)

        constraint = None
        if has_invalid:
            constraint = fit_constraint(self.dataset.X, self.dataset.labels, cfg.constraint, cfg.network,
                                        seed=rng, K=self.space.K)
        extra = self._extra_candidates(rng)

        if cfg.surrogate == "gp":
            return self._gp_suggestion(rng, constraint, extra)

        init = self._last_net if cfg.warm_start else None
        model = fit_dngo(self.dataset.X_valid, self.dataset.y_valid, cfg, rng, theta0=self._last_theta, init=init)
        self.last_model = model
        self._last_theta = model.samples[-1].theta
        self._last_net = model.net
        ctx = AcquisitionContext(model.net, model.samples, constraint, float(model.standardize(self.f_best)),
                                 pending, n_fantasies=cfg.acquisition.n_fantasies, seed=rng)
        return optimize_acquisition(ctx, seed=rng, config=cfg.acquisition, extra_candidates=extra)

    def _gp_suggestion(self, rng, constraint, extra) -> np.ndarray:
        cfg = self.config
        X = self.dataset.X_valid
        ys, mean, std = standardize(self.dataset.y_valid)
        model = gp_fit(X, ys, median_distance_params(X))
        ei = gp_acquisition(model, float((self.f_best - mean) / std))
        acq = ei if constraint is None else (lambda Z: ei(Z) * prob_valid(constraint, Z))
        x, _ = maximize(acq, self.space.K, rng, cfg.acquisition, extra)
        return x


# ---------------------------------------------------------------------------
# simulated parallel runs


def _evaluate(problem, x_native) -> Optional[float]:
    try:
        value = problem(x_native)
    except Exception as exc:  # evaluator crashes count as invalid outcomes
        log.warning("evaluator raised %r at %s; recording as invalid", exc, np.asarray(x_native).tolist())
        return None
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def run(problem, budget: int, parallelism: int = 1, seed: int = 0, config: EngineConfig = EngineConfig(),
        on_record: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Optimize ``problem`` with ``parallelism`` simulated workers.

    Workers finish in order of simulated completion time (problem durations,
    ties broken by issue order). After each completion the result is observed
    and, while budget remains, a new suggestion is issued with the remaining
    in-flight points treated as pending. Returns one record per completion.
    """
    if not budget >= parallelism >= 1:
        raise ValueError("need budget >= parallelism >= 1")
    opt = Optimizer(problem.space, config, seed)
    clock = 0.0
    queue: list = []
    records: list[dict] = []

    def issue():
        n_pending = len(opt.pending)
        x = opt.suggest()
        i = opt.n_suggested - 1
        u = opt.pending[-1]
        seconds = opt.last_info["seconds"]
        heapq.heappush(queue, (clock + problem.duration(x), i, x, u, seconds, n_pending))

    for _ in range(parallelism):
        issue()
    while queue:
        clock, i, x, u, seconds, n_pending = heapq.heappop(queue)
        value = _evaluate(problem, x)
        opt.observe(u, value, unit=True)
        rec = {
            "iteration": i,
            "x_native": [float(v) for v in x],
            "x_unit": [float(v) for v in u],
            "outcome": value if value is not None else "invalid",
            "wall_time": seconds,
            "pending_count_at_suggest": n_pending,
            "incumbent": opt.f_best,
        }
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if opt.n_suggested < budget:
            issue()
    return records
