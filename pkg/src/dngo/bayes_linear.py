"""Bayesian linear regression on learned basis functions.

The output weights carry a N(0, I/alpha) prior and the targets Gaussian noise
with precision beta. The prior mean is a convex quadratic

    eta(x) = lambda + (x - c)^T diag(Lambda) (x - c)

and the hyperparameters (alpha, beta, lambda, Lambda, c) are integrated out by
coordinate-wise slice sampling of the evidence times their hyperpriors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.special import exp1

LOG_2PI = math.log(2.0 * math.pi)
EULER_GAMMA = 0.5772156649015329


class SamplerError(RuntimeError):
    """Raised when a slice-sampling chain cannot proceed."""


@dataclass(frozen=True)
class RegressionHyperparams:
    alpha: float
    beta: float
    lambda_offset: float
    Lambda_diag: tuple
    c: tuple

    def __post_init__(self):
        object.__setattr__(self, "Lambda_diag", tuple(float(v) for v in np.ravel(self.Lambda_diag)))
        object.__setattr__(self, "c", tuple(float(v) for v in np.ravel(self.c)))
        if len(self.Lambda_diag) != len(self.c):
            raise ValueError("Lambda_diag and c must have the same length")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be positive (got {self.alpha}, {self.beta})")
        if any(not v > 0 for v in self.Lambda_diag):
            raise ValueError(f"Lambda_diag entries must be positive, got {self.Lambda_diag}")

    @property
    def K(self) -> int:
        return len(self.c)

    @classmethod
    def default(cls, K: int) -> "RegressionHyperparams":
        return cls(alpha=1.0, beta=100.0, lambda_offset=0.0, Lambda_diag=(0.1,) * K, c=(0.5,) * K)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "lambda_offset": self.lambda_offset,
                "Lambda_diag": list(self.Lambda_diag), "c": list(self.c)}


def prior_mean(theta: RegressionHyperparams, X) -> np.ndarray | float:
    """Quadratic prior mean eta(x); accepts a single point or rows of points."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != theta.K:
        raise ValueError(f"expected {theta.K} coordinates, got {X.shape[-1]}")
    d = X - np.asarray(theta.c)
    eta = theta.lambda_offset + (d * d) @ np.asarray(theta.Lambda_diag)
    return float(eta) if X.ndim == 1 else eta


def _cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter from 1e-10 to 1e-6."""
    try:
        return linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    scale = max(float(np.mean(np.diag(A))), 1.0)
    for jitter in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            return linalg.cholesky(A + jitter * scale * np.eye(len(A)), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
    raise linalg.LinAlgError("posterior precision is not positive definite even with jitter 1e-6")


@dataclass(frozen=True)
class PosteriorState:
    """Posterior over output weights: N(m, K_mat^-1)."""

    Phi: np.ndarray
    y_hat: np.ndarray
    K_mat: np.ndarray
    m: np.ndarray
    chol: np.ndarray = field(repr=False)
    alpha: float
    beta: float

    @property
    def D(self) -> int:
        return self.m.size

    def covariance(self) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), np.eye(self.D), check_finite=False)


def fit_posterior(Phi, y, theta: RegressionHyperparams, X) -> PosteriorState:
    """Posterior of the output weights given the residual targets y - eta(X)."""
    Phi = np.asarray(Phi, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if Phi.ndim != 2 or Phi.shape[1] < 1:
        raise ValueError("design matrix must be N x D with D >= 1")
    if Phi.shape[0] != y.size:
        raise ValueError("design matrix and targets disagree in length")
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite entries in design matrix or targets")
    N, D = Phi.shape
    y_hat = y - prior_mean(theta, np.asarray(X, dtype=float).reshape(N, theta.K)) if N else y
    K_mat = theta.beta * (Phi.T @ Phi) + theta.alpha * np.eye(D)
    L = _cholesky(K_mat)
    m = linalg.cho_solve((L, True), theta.beta * (Phi.T @ y_hat), check_finite=False)
    return PosteriorState(Phi, y_hat, K_mat, m, L, theta.alpha, theta.beta)


def predict(state: PosteriorState, phi_x, eta_x):
    """Predictive mean m^T phi + eta and variance phi^T K^-1 phi + 1/beta."""
    phi = np.asarray(phi_x, dtype=float)
    single = phi.ndim == 1
    phi = np.atleast_2d(phi)
    if phi.shape[1] != state.D:
        raise ValueError(f"expected {state.D} basis values, got {phi.shape[1]}")
    mu = phi @ state.m + eta_x
    v = linalg.solve_triangular(state.chol, phi.T, lower=True, check_finite=False)
    sigma2 = np.sum(v * v, axis=0) + 1.0 / state.beta
    if single:
        return float(np.ravel(mu)[0]), float(sigma2[0])
    return mu, sigma2


def log_marginal_likelihood(Phi, y, theta: RegressionHyperparams, X) -> float:
    """Log evidence of the targets with the output weights integrated out."""
    state = fit_posterior(Phi, y, theta, X)
    N, D = state.Phi.shape
    if N == 0:
        return 0.0
    r = state.y_hat - state.Phi @ state.m
    logdet = 2.0 * np.sum(np.log(np.diag(state.chol)))
    return float(0.5 * D * math.log(theta.alpha) + 0.5 * N * math.log(theta.beta) - 0.5 * N * LOG_2PI
                 - 0.5 * theta.beta * (r @ r) - 0.5 * theta.alpha * (state.m @ state.m) - 0.5 * logdet)


class EvidenceEvaluator:
    """Log evidence as a function of the hyperparameters, with N-independent cost.

    The residual targets are y - B @ coef where B = [1, X, X^2] and coef is a
    closed-form function of (lambda, Lambda, c), so every data-dependent
    quantity reduces to a small precomputed Gram matrix. With the eigenbasis
    Phi^T Phi = Q diag(s) Q^T, the evidence is O(D*K + D) per call.
    """

    def __init__(self, Phi, y, X):
        Phi = np.asarray(Phi, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        X = np.asarray(X, dtype=float).reshape(y.size, -1)
        self.N, self.D = Phi.shape
        self.K = X.shape[1]
        B = np.hstack([np.ones((self.N, 1)), X, X * X])
        s, Q = linalg.eigh(Phi.T @ Phi)
        self.s = np.maximum(s, 0.0)
        self.QtPhiT_y = Q.T @ (Phi.T @ y)
        self.QtPhiT_B = Q.T @ (Phi.T @ B)
        self.yy = float(y @ y)
        self.By = B.T @ y
        self.BB = B.T @ B

    def _evaluate(self, a: float, b: float, lam_offset: float, lam: np.ndarray, c: np.ndarray) -> float:
        if self.N == 0:
            return 0.0
        coef = np.concatenate([[lam_offset + lam @ (c * c)], -2.0 * lam * c, lam])
        rt = self.QtPhiT_y - self.QtPhiT_B @ coef
        yhat_sq = self.yy - 2.0 * (self.By @ coef) + coef @ self.BB @ coef
        denom = b * self.s + a
        quad = 0.5 * b * yhat_sq - 0.5 * b * b * np.sum(rt * rt / denom)
        return float(0.5 * self.D * math.log(a) + 0.5 * self.N * math.log(b) - 0.5 * self.N * LOG_2PI
                     - quad - 0.5 * np.sum(np.log(denom)))

    def __call__(self, theta: RegressionHyperparams) -> float:
        return self._evaluate(theta.alpha, theta.beta, theta.lambda_offset,
                              np.asarray(theta.Lambda_diag), np.asarray(theta.c))


# ---------------------------------------------------------------------------
# hyperpriors


def _log_exp_e1(log_u: np.ndarray) -> np.ndarray:
    """log(exp(u) * E1(u)) evaluated stably from log(u)."""
    log_u = np.asarray(log_u, dtype=float)
    u = np.exp(np.minimum(log_u, 700.0))
    out = np.empty_like(log_u)
    small = log_u < -20.0
    large = log_u > math.log(50.0)
    mid = ~(small | large)
    # E1(u) ~ -gamma - log u as u -> 0
    out[small] = np.log(-EULER_GAMMA - log_u[small])
    out[mid] = u[mid] + np.log(exp1(u[mid]))
    if np.any(large):
        ul = u[large]
        series = np.zeros_like(ul)
        term = np.ones_like(ul)
        for n in range(12):
            series += term
            term = -term * (n + 1) / ul
        out[large] = np.log(series) - np.log(ul)
    return out


def log_horseshoe(x, scale: float = 1.0) -> np.ndarray:
    """Log density of the horseshoe distribution on the real line.

    Uses the exact scale-mixture marginal
    p(x) = exp(u) E1(u) / (scale * sqrt(2 pi^3)), u = x^2 / (2 scale^2).
    """
    x = np.abs(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        log_u = 2.0 * np.log(x) - math.log(2.0 * scale * scale)
    out = np.full_like(x, np.inf)
    nz = x > 0
    out[nz] = _log_exp_e1(log_u[nz]) - math.log(scale) - 0.5 * math.log(2.0 * math.pi ** 3)
    return out


@dataclass(frozen=True)
class HyperPrior:
    alpha_bounds: tuple = (1e-4, 1e4)
    beta_bounds: tuple = (1e-4, 1e4)
    lambda_mean: float = 0.0
    lambda_std: float = 1.0
    c_mean: float = 0.5
    c_std: float = 1.0
    horseshoe_scale: float = 1.0


def _log_uniform(v: float, bounds: tuple) -> float:
    lo, hi = bounds
    if not lo <= v <= hi:
        return -math.inf
    return -math.log(v) - math.log(math.log(hi / lo))


def _log_normal(v, mean, std) -> float:
    z = (np.asarray(v) - mean) / std
    return float(np.sum(-0.5 * z * z - math.log(std) - 0.5 * LOG_2PI))


def _log_prior_parts(alpha, beta, lam_offset, lam, c, prior: HyperPrior) -> float:
    if np.any(lam <= 0):
        return -math.inf
    lp = _log_uniform(alpha, prior.alpha_bounds) + _log_uniform(beta, prior.beta_bounds)
    if not math.isfinite(lp):
        return -math.inf
    lp += _log_normal(lam_offset, prior.lambda_mean, prior.lambda_std)
    lp += _log_normal(c, prior.c_mean, prior.c_std)
    lp += float(np.sum(math.log(2.0) + log_horseshoe(lam, prior.horseshoe_scale)))
    return lp


def log_hyperprior(theta: RegressionHyperparams, prior: HyperPrior = HyperPrior()) -> float:
    """Joint log prior density of the hyperparameters; -inf outside the support.

    Log-uniform on alpha and beta, Gaussian on lambda and c, and a horseshoe
    restricted to the positive half-line on each Lambda_kk.
    """
    return _log_prior_parts(theta.alpha, theta.beta, theta.lambda_offset,
                            np.asarray(theta.Lambda_diag), np.asarray(theta.c), prior)


# ---------------------------------------------------------------------------
# slice sampling


def slice_sample_step(log_density: Callable[[float], float], x0: float, width: float, seed=None,
                      max_steps_out: int = 1000, max_shrinks: int = 1000, log_f0: Optional[float] = None):
    """One univariate slice-sampling update with stepping out and shrinkage.

    Returns the new point. ``seed`` may be a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    f0 = log_density(x0) if log_f0 is None else log_f0
    if not math.isfinite(f0):
        raise SamplerError(f"log density at the initial point {x0} is not finite")
    log_y = f0 - rng.exponential()
    left = x0 - width * rng.uniform()
    right = left + width
    steps = 0
    while log_density(left) > log_y:
        left -= width
        steps += 1
        if steps > max_steps_out:
            raise SamplerError("slice step-out did not terminate (improper or flat density?)")
    while log_density(right) > log_y:
        right += width
        steps += 1
        if steps > max_steps_out:
            raise SamplerError("slice step-out did not terminate (improper or flat density?)")
    for _ in range(max_shrinks):
        x1 = left + (right - left) * rng.uniform()
        f1 = log_density(x1)
        if f1 >= log_y:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1
    raise SamplerError(f"slice shrinkage failed to find an acceptable point near {x0}")


def _to_vector(theta: RegressionHyperparams) -> np.ndarray:
    return np.concatenate([[math.log(theta.alpha), math.log(theta.beta), theta.lambda_offset],
                           np.log(theta.Lambda_diag), theta.c])


def _from_vector(u: np.ndarray, K: int) -> RegressionHyperparams:
    return RegressionHyperparams(alpha=math.exp(u[0]), beta=math.exp(u[1]), lambda_offset=float(u[2]),
                                 Lambda_diag=np.exp(u[3:3 + K]), c=u[3 + K:3 + 2 * K])


def slice_sample_hyperparams(Phi, y, X, theta0: RegressionHyperparams, n_samples: int, burn_in: int,
                             seed=None, thin: int = 2, width: float = 1.0,
                             prior: HyperPrior = HyperPrior()) -> list[RegressionHyperparams]:
    """Draw hyperparameter samples from evidence x hyperprior.

    Coordinates are swept in a fixed order; alpha, beta and Lambda are moved in
    log space (the Jacobian is folded into the target).
    """
    if n_samples < 0 or burn_in < 0 or thin < 1:
        raise ValueError("n_samples and burn_in must be >= 0 and thin >= 1")
    if n_samples == 0:
        return []
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K = theta0.K
    evidence = EvidenceEvaluator(Phi, y, X)
    n_log = 3 + K
    log_coords = np.r_[0, 1, 3:n_log]

    def log_target(u: np.ndarray) -> float:
        if not np.all(np.isfinite(u)) or np.any(np.abs(u[log_coords]) > 700):
            return -math.inf
        alpha, beta, lam_offset = math.exp(u[0]), math.exp(u[1]), u[2]
        lam, c = np.exp(u[3:n_log]), u[n_log:]
        lp = _log_prior_parts(alpha, beta, lam_offset, lam, c, prior)
        if not math.isfinite(lp):
            return -math.inf
        return evidence._evaluate(alpha, beta, lam_offset, lam, c) + lp + float(np.sum(u[log_coords]))

    u = _to_vector(theta0)
    current = log_target(u)
    if not math.isfinite(current):
        raise SamplerError(f"initial hyperparameters have zero posterior density: {theta0}")

    samples = []
    total = burn_in + n_samples * thin
    for sweep in range(total):
        for i in range(u.size):
            def cond(v, i=i):
                u_try = u.copy()
                u_try[i] = v
                return log_target(u_try)
            try:
                u[i] = slice_sample_step(cond, u[i], width, rng, log_f0=current)
            except (SamplerError, linalg.LinAlgError, FloatingPointError) as exc:
                raise SamplerError(f"hyperparameter chain failed at sweep {sweep}, coordinate {i}: {exc}") from exc
            current = log_target(u)
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0:
            samples.append(_from_vector(u, K))
    return samples
