"""Exact Gaussian-process baseline with fixed kernel hyperparameters.

Only used to contrast per-suggestion cost against the basis-regression
surrogate: fitting factorizes the full N x N covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .acquisition import AcquisitionConfig, expected_improvement, maximize


@dataclass(frozen=True)
class KernelParams:
    lengthscales: tuple
    signal_variance: float = 1.0
    noise_variance: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in np.ravel(self.lengthscales)))
        if any(not v > 0 for v in self.lengthscales):
            raise ValueError(f"lengthscales must be positive, got {self.lengthscales}")
        if not (self.signal_variance > 0 and self.noise_variance > 0):
            raise ValueError("signal and noise variances must be positive")


def median_distance_params(X, max_points: int = 500) -> KernelParams:
    """Per-dimension median pairwise distance as lengthscales."""
    X = np.asarray(X, dtype=float)[:max_points]
    K = X.shape[1]
    if X.shape[0] < 2:
        return KernelParams((1.0,) * K)
    ls = []
    for k in range(K):
        d = np.abs(X[:, None, k] - X[None, :, k])
        med = float(np.median(d[np.triu_indices(len(X), 1)]))
        ls.append(med if med > 0 else 1.0)
    return KernelParams(tuple(ls))


def se_kernel(A, B, params: KernelParams) -> np.ndarray:
    ls = np.asarray(params.lengthscales)
    return params.signal_variance * np.exp(-0.5 * cdist(A / ls, B / ls, "sqeuclidean"))


@dataclass(frozen=True)
class GPModel:
    X: np.ndarray
    y: np.ndarray
    params: KernelParams
    mean: float
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def predict(self, Xs):
        """Predictive mean and variance of a new noisy observation."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        Ks = se_kernel(self.X, Xs, self.params)
        mu = self.mean + Ks.T @ self.weights
        v = linalg.solve_triangular(self.chol, Ks, lower=True, check_finite=False)
        var = self.params.signal_variance - np.sum(v * v, axis=0) + self.params.noise_variance
        return mu, np.maximum(var, self.params.noise_variance)


def gp_fit(X, y, params: KernelParams) -> GPModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 1 or X.shape[0] != y.size:
        raise ValueError("GP needs at least one observation with matching targets")
    if len(params.lengthscales) != X.shape[1]:
        raise ValueError("one lengthscale per input dimension is required")
    C = se_kernel(X, X, params) + params.noise_variance * np.eye(len(X))
    for jitter in (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            L = linalg.cholesky(C + jitter * np.eye(len(X)), lower=True, check_finite=False)
            break
        except linalg.LinAlgError:
            continue
    else:
        raise linalg.LinAlgError("GP covariance factorization failed with jitter up to 1e-6")
    mean = float(np.mean(y))
    w = linalg.cho_solve((L, True), y - mean, check_finite=False)
    return GPModel(X, y, params, mean, L, w)


def gp_acquisition(model: GPModel, f_best: float):
    def acq(Xs):
        mu, var = model.predict(Xs)
        return expected_improvement(mu, np.sqrt(var), f_best)
    return acq


def gp_suggest(model: GPModel, f_best: float, seed=None, config: AcquisitionConfig = AcquisitionConfig(),
               extra_candidates=None) -> np.ndarray:
    """Unit-cube argmax of EI under the GP, using the shared inner optimizer."""
    x, _ = maximize(gp_acquisition(model, f_best), model.X.shape[1], seed, config, extra_candidates)
    return x
