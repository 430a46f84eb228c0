"""Expected improvement and its constrained, fantasy-averaged variants.

All quantities live on the standardized target scale used by the surrogate.
The integrated acquisition averages constrained EI over hyperparameter samples
and, for each sample, over fantasy outcomes of the pending evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import erfcx, expit, ndtr
from scipy.stats import qmc

from .bayes_linear import PosteriorState, RegressionHyperparams, prior_mean
from .constraint import ConstraintPosterior, activation_moments, logistic_gaussian, refit_with
from .network import BasisNetwork, forward_features

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)


def expected_improvement(mu, sigma, f_best):
    """EI for minimization: sigma * (gamma * Phi(gamma) + N(gamma; 0, 1)).

    ``sigma == 0`` yields the limit ``max(f_best - mu, 0)``. Broadcasts.
    """
    mu, sigma, f_best = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, f_best)))
    out = np.array(np.maximum(f_best - mu, 0.0))
    pos = sigma > 0
    if np.any(pos):
        s = sigma[pos]
        g = (f_best[pos] - mu[pos]) / s
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * g * g)
        # for gamma < 0 use the Mills ratio to avoid cancellation in the tail
        neg = g < 0
        h = np.empty_like(g)
        h[~neg] = g[~neg] * ndtr(g[~neg]) + pdf[~neg]
        gn = g[neg]
        h[neg] = pdf[neg] * (1.0 + gn * _SQRT_HALF_PI * erfcx(-gn / math.sqrt(2.0)))
        out[pos] = s * np.maximum(h, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ObjectiveSample:
    """One hyperparameter sample with the weight posterior it induces."""

    theta: RegressionHyperparams
    state: PosteriorState


@dataclass(frozen=True)
class FantasySet:
    """Hypothetical outcomes for the pending inputs. ``y`` is NaN where invalid."""

    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray

    def augment(self, X, y):
        keep = self.valid
        return np.vstack([X, self.x[keep]]), np.concatenate([y, self.y[keep]])


@dataclass
class AcquisitionContext:
    """Everything needed to score candidates for one suggestion.

    ``basis`` produces the objective features; ``samples`` may be empty when no
    valid observation exists, in which case the acquisition reduces to the
    probability of validity. ``pending`` holds unit-cube inputs still running.
    """

    basis: Optional[BasisNetwork]
    samples: list
    constraint: Optional[ConstraintPosterior]
    f_best: Optional[float]
    pending: np.ndarray
    n_fantasies: int = 10
    seed: object = None
    _terms: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        self.pending = np.asarray(self.pending, dtype=float)
        if self.pending.size == 0:
            K = self.samples[0].theta.K if self.samples else (
                self.constraint.basis_net.n_inputs if self.constraint is not None else 0)
            self.pending = self.pending.reshape(0, K)
        if np.any(self.pending < 0) or np.any(self.pending > 1):
            raise ValueError("pending points must lie in the unit hypercube")
        if self.n_fantasies < 1:
            raise ValueError("n_fantasies must be positive")
        if self.samples and self.f_best is None:
            raise ValueError("f_best is required when objective samples are present")
        if not self.samples and self.constraint is None:
            raise ValueError("context needs objective samples or a constraint model")

    @property
    def J(self) -> int:
        return self.pending.shape[0]

    def features(self, X) -> np.ndarray:
        return forward_features(self.basis, X)

    def terms(self) -> dict:
        if self._terms is None:
            self._terms = _build_terms(self)
        return self._terms


def _sample_constraint_labels(post: ConstraintPosterior, Psi_p: np.ndarray, rng) -> np.ndarray:
    w = post.w_map + linalg.solve_triangular(post.chol, rng.standard_normal(post.w_map.size),
                                             lower=True, trans="T", check_finite=False)
    p = expit(Psi_p @ w / post.temperature)
    return rng.uniform(size=p.size) < p


def fantasy_augment(ctx: AcquisitionContext, sample: Optional[ObjectiveSample], seed=None) -> list[FantasySet]:
    """Draw ``ctx.n_fantasies`` joint outcome sets for the pending inputs.

    Objective values come from the joint predictive of ``sample`` (weights
    drawn from their posterior plus observation noise); validity labels come
    from the constraint posterior when one exists, else all are valid.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    J, Xp = ctx.J, ctx.pending
    if J == 0:
        empty = np.zeros((0, Xp.shape[1]))
        return [FantasySet(empty, np.zeros(0), np.zeros(0, dtype=bool)) for _ in range(ctx.n_fantasies)]
    Psi_p = ctx.constraint.design(Xp) if ctx.constraint is not None else None
    if sample is not None:
        phi_p = ctx.features(Xp)
        eta_p = prior_mean(sample.theta, Xp)
        L = sample.state.chol
    out = []
    for _ in range(ctx.n_fantasies):
        valid = (_sample_constraint_labels(ctx.constraint, Psi_p, rng) if Psi_p is not None
                 else np.ones(J, dtype=bool))
        y = np.full(J, np.nan)
        if sample is not None:
            w = sample.state.m + linalg.solve_triangular(L, rng.standard_normal(L.shape[0]), lower=True,
                                                         trans="T", check_finite=False)
            noise = rng.standard_normal(J) / math.sqrt(sample.state.beta)
            y = np.where(valid, phi_p @ w + eta_p + noise, np.nan)
        out.append(FantasySet(Xp.copy(), y, valid))
    return out


def _augmented_state(sample: ObjectiveSample, phi_new: np.ndarray, yhat_new: np.ndarray):
    """(m, L) after appending rows to the regression, reusing the fitted precision."""
    st = sample.state
    K_new = st.K_mat + st.beta * (phi_new.T @ phi_new)
    rhs = st.K_mat @ st.m + st.beta * (phi_new.T @ yhat_new)
    L = linalg.cholesky(K_new, lower=True, check_finite=False)
    m = linalg.cho_solve((L, True), rhs, check_finite=False)
    return m, L


def _build_terms(ctx: AcquisitionContext) -> dict:
    """Flatten (hyperparameter sample x fantasy) pairs into stacked arrays."""
    rng = np.random.default_rng(ctx.seed)
    means, linvs, inv_beta, lam_off, lams, cs, fbest = [], [], [], [], [], [], []
    constraints, con_index = [], []
    K = ctx.pending.shape[1]

    def add_constraint(post):
        constraints.append(post)
        return len(constraints) - 1

    base_con = add_constraint(ctx.constraint) if ctx.constraint is not None else None

    def add_term(sample, m, L, f_best, con):
        th = sample.theta
        means.append(m)
        linvs.append(linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True, check_finite=False))
        inv_beta.append(1.0 / th.beta)
        lam_off.append(th.lambda_offset)
        lams.append(th.Lambda_diag)
        cs.append(th.c)
        fbest.append(f_best)
        con_index.append(con)

    if ctx.J == 0:
        for sample in ctx.samples:
            add_term(sample, sample.state.m, sample.state.chol, ctx.f_best, base_con)
        if not ctx.samples:
            con_index.append(base_con)
    elif ctx.samples:
        phi_p = ctx.features(ctx.pending)
        for sample in ctx.samples:
            eta_p = prior_mean(sample.theta, ctx.pending)
            for fs in fantasy_augment(ctx, sample, rng):
                keep = fs.valid
                if np.any(keep):
                    m, L = _augmented_state(sample, phi_p[keep], fs.y[keep] - eta_p[keep])
                    f_best = min(ctx.f_best, float(np.min(fs.y[keep])))
                else:
                    m, L, f_best = sample.state.m, sample.state.chol, ctx.f_best
                con = None
                if ctx.constraint is not None:
                    con = add_constraint(refit_with(ctx.constraint, fs.x, fs.valid))
                add_term(sample, m, L, f_best, con)
    else:
        for fs in fantasy_augment(ctx, None, rng):
            con_index.append(add_constraint(refit_with(ctx.constraint, fs.x, fs.valid)))

    terms = {"con_index": con_index, "constraints": constraints}
    if means:
        terms.update(m=np.array(means), linv=np.array(linvs), inv_beta=np.array(inv_beta),
                     lam_off=np.array(lam_off), lam=np.array(lams).reshape(-1, K),
                     c=np.array(cs).reshape(-1, K), f_best=np.array(fbest))
    if constraints:
        terms["con_w"] = np.array([c.w_map for c in constraints])
        terms["con_linv"] = np.array([linalg.solve_triangular(c.chol, np.eye(c.chol.shape[0]), lower=True,
                                                              check_finite=False) for c in constraints])
    return terms


def _objective_moments(terms: dict, phi: np.ndarray, X: np.ndarray):
    d = X[None, :, :] - terms["c"][:, None, :]
    eta = terms["lam_off"][:, None] + np.einsum("pmk,pk->pm", d * d, terms["lam"])
    mu = terms["m"] @ phi.T + eta
    v = np.einsum("pde,me->pmd", terms["linv"], phi)
    var = np.einsum("pmd,pmd->pm", v, v) + terms["inv_beta"][:, None]
    return mu, np.sqrt(var)


def _constraint_probs(terms: dict, ctx: AcquisitionContext, X: np.ndarray) -> np.ndarray:
    Psi = ctx.constraint.design(X)
    mean = terms["con_w"] @ Psi.T
    v = np.einsum("qde,me->qmd", terms["con_linv"], Psi)
    var = np.einsum("qmd,qmd->qm", v, v)
    T = ctx.constraint.temperature
    return logistic_gaussian(mean.ravel(), var.ravel(), T).reshape(mean.shape)


def _score(ctx: AcquisitionContext, X: np.ndarray, terms: dict) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    probs = _constraint_probs(terms, ctx, X) if terms["constraints"] else None
    if "m" not in terms:
        # no valid data yet: pure feasibility search
        return np.mean(probs[terms["con_index"]], axis=0)
    mu, sigma = _objective_moments(terms, ctx.features(X), X)
    ei = expected_improvement(mu, sigma, terms["f_best"][:, None])
    if probs is not None:
        ei = ei * probs[terms["con_index"]]
    return np.mean(ei, axis=0)


def _no_fantasy_terms(ctx: AcquisitionContext) -> dict:
    if ctx.J == 0:
        return ctx.terms()
    bare = AcquisitionContext(ctx.basis, ctx.samples, ctx.constraint, ctx.f_best,
                              np.zeros((0, ctx.pending.shape[1])), ctx.n_fantasies, ctx.seed)
    return bare.terms()


def constrained_ei(X, ctx: AcquisitionContext) -> np.ndarray:
    """EI on the valid-data posterior times the probability of validity,
    averaged over hyperparameter samples and ignoring pending inputs."""
    return _score(ctx, X, _no_fantasy_terms(ctx))


def integrated_acquisition(X, ctx: AcquisitionContext) -> np.ndarray:
    """Constrained EI averaged over hyperparameter samples and fantasy sets.

    Fantasies are drawn once per context from ``ctx.seed``; with nothing
    pending no random draws happen and the result is exactly
    :func:`constrained_ei`.
    """
    return _score(ctx, X, ctx.terms())


def predictive_sd(X, ctx: AcquisitionContext) -> np.ndarray:
    """Mean predictive standard deviation over hyperparameter samples."""
    terms = _no_fantasy_terms(ctx)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if "m" not in terms:
        return np.zeros(X.shape[0])
    _, sigma = _objective_moments(terms, ctx.features(X), X)
    return sigma.mean(axis=0)


# ---------------------------------------------------------------------------
# inner optimizer


@dataclass(frozen=True)
class AcquisitionConfig:
    n_candidates: int = 1000
    n_local: int = 10
    n_sweeps: int = 50
    initial_step: float = 0.1
    min_step: float = 1e-6
    n_fantasies: int = 10
    # fraction of extra candidates drawn around the incumbent
    local_fraction: float = 0.1
    local_scale: float = 0.05

    def __post_init__(self):
        if self.n_candidates < 1 or self.n_local < 0 or self.n_sweeps < 0:
            raise ValueError("invalid candidate/local-search counts")
        if self.n_fantasies < 1:
            raise ValueError("n_fantasies must be positive")


def candidate_points(K: int, n: int, seed=None) -> np.ndarray:
    """Scrambled Halton points in the unit hypercube."""
    return qmc.Halton(d=K, scramble=True, seed=np.random.default_rng(seed)).random(n)


def _coordinate_search(acq: Callable, x: np.ndarray, fx: np.ndarray, config: AcquisitionConfig):
    """Bounded coordinate search from several starts at once.

    Each sweep tries +/- step along every axis in turn, keeping strict
    improvements; a start whose sweep fails to improve halves its step.
    """
    x, fx = x.copy(), fx.copy()
    S, K = x.shape
    step = np.full(S, config.initial_step)
    for _ in range(config.n_sweeps):
        if np.all(step < config.min_step):
            break
        improved = np.zeros(S, dtype=bool)
        for k in range(K):
            trial = np.repeat(x, 2, axis=0)
            trial[0::2, k] -= step
            trial[1::2, k] += step
            np.clip(trial, 0.0, 1.0, out=trial)
            ft = acq(trial).reshape(S, 2)
            j = np.argmax(ft, axis=1)
            best = ft[np.arange(S), j]
            better = best > fx
            x[better] = trial.reshape(S, 2, K)[better, j[better]]
            fx[better] = best[better]
            improved |= better
        step = np.where(improved, step, 0.5 * step)
    return x, fx


def maximize(acq: Callable, K: int, seed=None, config: AcquisitionConfig = AcquisitionConfig(),
             extra_candidates: Optional[np.ndarray] = None) -> tuple[np.ndarray, float]:
    """Multistart maximization of a vectorized function over [0, 1]^K.

    Scores quasi-random candidates (plus any ``extra_candidates``), refines the
    best ``n_local`` by coordinate search and returns the overall best. Ties go
    to the lowest candidate index.
    """
    cands = candidate_points(K, config.n_candidates, seed)
    if extra_candidates is not None and len(extra_candidates):
        cands = np.vstack([cands, np.clip(np.asarray(extra_candidates, dtype=float), 0.0, 1.0)])
    vals = np.asarray(acq(cands), dtype=float)
    order = np.argsort(-vals, kind="stable")
    top = order[:config.n_local]
    best_i = int(order[0])
    best_x, best_f = cands[best_i], float(vals[best_i])
    if len(top) and config.n_sweeps:
        xs, fs = _coordinate_search(acq, cands[top], vals[top], config)
        j = int(np.argmax(fs))
        if fs[j] > best_f:
            best_x, best_f = xs[j], float(fs[j])
    return np.clip(best_x, 0.0, 1.0), best_f


def optimize_acquisition(ctx: AcquisitionContext, seed=None, config: AcquisitionConfig = AcquisitionConfig(),
                         extra_candidates: Optional[np.ndarray] = None) -> np.ndarray:
    """Next unit-cube input: argmax of the integrated acquisition.

    When the acquisition is zero everywhere the model is considered exhausted
    and the point of largest predictive spread is returned instead.
    """
    K = ctx.pending.shape[1]
    x, value = maximize(lambda X: integrated_acquisition(X, ctx), K, seed, config, extra_candidates)
    if value <= 0.0 and ctx.samples:
        x, _ = maximize(lambda X: predictive_sd(X, ctx), K, seed, config, extra_candidates)
    return x
