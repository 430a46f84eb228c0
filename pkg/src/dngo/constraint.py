"""Probability that an input yields a valid evaluation.

Validity labels are modelled by logistic regression on the features of a
separate basis network. The output weights get a Gaussian prior and a Laplace
approximation to their posterior; predictions integrate the logistic link over
the resulting Gaussian activation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit, ndtr, roots_hermitenorm, roots_legendre

from .network import BasisNetwork, NetworkConfig, forward_features, init_params, train_map

log = logging.getLogger(__name__)

LIKELIHOODS = {"logistic": 1.0, "step_approx": 1e-2}

_GH_Z, _GH_W = roots_hermitenorm(64)
_GH_W = _GH_W / _GH_W.sum()
_GL_U, _GL_W = roots_legendre(96)
_GL_U = 0.5 * (_GL_U + 1.0)
_GL_W = 0.5 * _GL_W
_GL_LOGIT = np.log(_GL_U) - np.log1p(-_GL_U)


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstraintHyperparams:
    weight_prior_precision: float = 1.0
    likelihood: str = "logistic"

    def __post_init__(self):
        if not self.weight_prior_precision > 0:
            raise ValueError("weight_prior_precision must be positive")
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(f"likelihood must be one of {sorted(LIKELIHOODS)}")

    @property
    def temperature(self) -> float:
        return LIKELIHOODS[self.likelihood]


@dataclass(frozen=True)
class ConstraintPosterior:
    """Laplace posterior N(w_map, hessian^-1) over the output weights (bias last)."""

    w_map: np.ndarray
    hessian: np.ndarray
    basis_net: BasisNetwork
    psi: ConstraintHyperparams
    Psi: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)
    objective_trace: tuple = field(default=(), repr=False)

    @property
    def temperature(self) -> float:
        return self.psi.temperature

    def design(self, X) -> np.ndarray:
        return augmented_features(self.basis_net, X)


def augmented_features(net: BasisNetwork, X) -> np.ndarray:
    phi = forward_features(net, np.atleast_2d(np.asarray(X, dtype=float)))
    return np.hstack([phi, np.ones((phi.shape[0], 1))])


def _neg_log_posterior(w, Psi, labels, prec):
    a = Psi @ w
    return float(np.sum(np.logaddexp(0.0, a) - labels * a) + 0.5 * prec * (w @ w))


def laplace_fit(Psi, labels, psi: ConstraintHyperparams, w0=None, tol: float = 1e-8,
                max_iter: int = 200) -> tuple[np.ndarray, np.ndarray, list]:
    """Newton iterations with backtracking for the MAP output weights.

    The fit always uses the unit-temperature logistic link: with a near-step
    link the MAP margin collapses to the temperature scale and the Laplace
    Gaussian degenerates to the prior. The step likelihood enters at
    prediction time instead (see :func:`prob_valid`).

    Returns ``(w_map, hessian, objective_trace)``.
    """
    Psi = np.asarray(Psi, dtype=float)
    labels = np.asarray(labels, dtype=float)
    P = Psi.shape[1]
    prec = psi.weight_prior_precision
    w = np.zeros(P) if w0 is None else np.array(w0, dtype=float)
    obj = _neg_log_posterior(w, Psi, labels, prec)
    trace = [obj]

    def derivatives(w):
        p = expit(Psi @ w)
        grad = Psi.T @ (p - labels) + prec * w
        H = (Psi.T * (p * (1.0 - p))) @ Psi + prec * np.eye(P)
        return grad, H

    for _ in range(max_iter):
        grad, H = derivatives(w)
        if np.linalg.norm(grad) < tol:
            return w, H, trace
        step = linalg.solve(H, grad, assume_a="pos", check_finite=False)
        decrement = float(grad @ step)
        t = 1.0
        while t > 1e-12:
            w_new = w - t * step
            obj_new = _neg_log_posterior(w_new, Psi, labels, prec)
            if obj_new <= obj - 1e-4 * t * decrement:
                break
            t *= 0.5
        else:
            # no decrease representable in floating point
            break
        w, obj = w_new, obj_new
        trace.append(obj)
    grad, H = derivatives(w)
    # accept a rounding-limited optimum
    if np.linalg.norm(grad) < max(tol, 1e-6):
        return w, H, trace
    raise ConvergenceError(f"Newton iterations stalled with gradient norm {np.linalg.norm(grad):.3g}")


def fit_constraint(X, labels, psi: ConstraintHyperparams = ConstraintHyperparams(),
                   config: NetworkConfig = NetworkConfig(), seed=None,
                   basis: Optional[BasisNetwork] = None, K: Optional[int] = None) -> ConstraintPosterior:
    """Train a constraint basis (unless ``basis`` is given) and its Laplace posterior.

    ``labels`` are 1 for valid and 0 for invalid observations.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=float).ravel()
    if X.ndim == 1:
        X = X.reshape(0, K) if X.size == 0 else X[None, :]
    n_inputs = X.shape[1] if X.size else K
    if basis is None:
        if n_inputs is None:
            raise ValueError("input dimensionality unknown for empty data; pass K")
        rng = np.random.default_rng(seed)
        if labels.size:
            basis = train_map(config, X, labels, seed=rng, loss="cross_entropy")
        else:
            basis = init_params(config, n_inputs, rng)
    Psi = augmented_features(basis, X) if labels.size else np.zeros((0, basis.D + 1))
    w, H, trace = laplace_fit(Psi, labels, psi)
    L = linalg.cholesky(H, lower=True, check_finite=False)
    return ConstraintPosterior(w, H, basis, psi, Psi, labels, L, tuple(trace))


def refit_with(post: ConstraintPosterior, X_extra, labels_extra) -> ConstraintPosterior:
    """Posterior on the same basis after appending labelled points."""
    Psi_new = np.vstack([post.Psi, post.design(X_extra)])
    labels_new = np.concatenate([post.labels, np.asarray(labels_extra, dtype=float)])
    w, H, trace = laplace_fit(Psi_new, labels_new, post.psi, w0=post.w_map)
    L = linalg.cholesky(H, lower=True, check_finite=False)
    return ConstraintPosterior(w, H, post.basis_net, post.psi, Psi_new, labels_new, L, tuple(trace))


def activation_moments(post: ConstraintPosterior, Psi) -> tuple[np.ndarray, np.ndarray]:
    mean = Psi @ post.w_map
    v = linalg.solve_triangular(post.chol, Psi.T, lower=True, check_finite=False)
    return mean, np.sum(v * v, axis=0)


def logistic_gaussian(mean, var, temperature: float = 1.0) -> np.ndarray:
    """E[sigmoid(a / temperature)] for a ~ N(mean, var), by 1-D quadrature.

    Integrates over the Gaussian when its spread is below the temperature and
    over the logistic noise otherwise, so the integrand stays smooth in both
    the noisy and the near-step regimes.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.sqrt(np.maximum(np.atleast_1d(np.asarray(var, dtype=float)), 0.0))
    sd = np.broadcast_to(sd, mean.shape)
    out = np.empty_like(mean)
    narrow = sd < temperature
    if np.any(narrow):
        a = mean[narrow, None] + sd[narrow, None] * _GH_Z
        out[narrow] = expit(a / temperature) @ _GH_W
    wide = ~narrow
    if np.any(wide):
        z = (mean[wide, None] + temperature * _GL_LOGIT) / sd[wide, None]
        out[wide] = ndtr(z) @ _GL_W
    return out


def prob_valid(post: ConstraintPosterior, X) -> np.ndarray:
    """Posterior-averaged probability that each row of X is valid."""
    mean, var = activation_moments(post, post.design(X))
    return logistic_gaussian(mean, var, post.temperature)


def prob_valid_noiseless(post: ConstraintPosterior, X) -> np.ndarray:
    """As :func:`prob_valid` for a posterior fitted with the step likelihood."""
    if post.psi.likelihood != "step_approx":
        raise ValueError("noiseless predictions need a posterior fitted with likelihood='step_approx'")
    return prob_valid(post, X)
