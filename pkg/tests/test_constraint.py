import numpy as np
import pytest
from scipy import optimize
from scipy.special import expit

from dngo.constraint import (ConstraintHyperparams, activation_moments, fit_constraint, laplace_fit,
                             logistic_gaussian, prob_valid, prob_valid_noiseless, refit_with)
from dngo.network import NetworkConfig, init_params

SMALL = NetworkConfig(layer_widths=(4,), epochs=200)


def mc_prob(post, X, n=1_000_000, seed=0, chunk=100_000):
    """Average of sigmoid(psi^T w / T) over Laplace weight samples."""
    rng = np.random.default_rng(seed)
    Psi = post.design(X)
    cov = np.linalg.inv(post.hessian)
    total = np.zeros(len(Psi))
    for _ in range(n // chunk):
        W = rng.multivariate_normal(post.w_map, cov, size=chunk)
        total += expit((Psi @ W.T) / post.temperature).sum(axis=1)
    return total / n


def half_space_data(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 2))
    return X, (X[:, 0] + X[:, 1] < 1.0).astype(float)


def test_empty_data_is_prior():
    post = fit_constraint(np.zeros((0, 2)), [], ConstraintHyperparams(2.0), SMALL, seed=0, K=2)
    assert np.all(post.w_map == 0)
    np.testing.assert_allclose(post.hessian, 2.0 * np.eye(5))
    np.testing.assert_allclose(prob_valid(post, np.random.default_rng(0).random((20, 2))), 0.5, atol=1e-12)


def test_separable_labels_match_penalized_logistic_oracle():
    x = np.linspace(0, 1, 12)
    labels = (x < 0.5).astype(float)
    Psi = np.column_stack([x - 0.5, np.ones_like(x)])
    psi = ConstraintHyperparams(1.0)
    w, H, _ = laplace_fit(Psi, labels, psi)
    assert np.all(np.isfinite(w))

    def objective(v):
        a = Psi @ v
        return np.sum(np.logaddexp(0, a) - labels * a) + 0.5 * v @ v

    ref = optimize.minimize(objective, np.zeros(2), method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose(w, ref, atol=1e-6)
    p = expit(Psi @ w)
    np.testing.assert_allclose(H, (Psi.T * (p * (1 - p))) @ Psi + np.eye(2), atol=1e-12)


def test_all_valid_gives_majority_valid():
    rng = np.random.default_rng(1)
    X = 0.3 + 0.4 * rng.random((15, 2))
    post = fit_constraint(X, np.ones(15), ConstraintHyperparams(), SMALL, seed=1)
    hull = 0.3 + 0.4 * rng.random((200, 2))
    assert np.all(prob_valid(post, hull) > 0.5)


def test_objective_trace_is_monotone():
    X, labels = half_space_data(60, 2)
    post = fit_constraint(X, labels, ConstraintHyperparams(), SMALL, seed=2)
    trace = np.array(post.objective_trace)
    assert len(trace) > 1 and np.all(np.diff(trace) <= 1e-12)
    np.testing.assert_allclose(post.hessian, post.hessian.T)
    assert np.all(np.linalg.eigvalsh(post.hessian) > 0)


def test_label_symmetry_with_fixed_basis():
    X, labels = half_space_data(40, 3)
    basis = init_params(SMALL, 2, seed=3)
    a = fit_constraint(X, labels, basis=basis)
    b = fit_constraint(X, 1 - labels, basis=basis)
    T = np.random.default_rng(3).random((100, 2))
    np.testing.assert_allclose(prob_valid(a, T), 1 - prob_valid(b, T), atol=1e-10)


@pytest.mark.parametrize("likelihood", ["logistic", "step_approx"])
def test_predictive_matches_monte_carlo(likelihood):
    X, labels = half_space_data(30, 4)
    post = fit_constraint(X, labels, ConstraintHyperparams(likelihood=likelihood), SMALL, seed=4)
    T = np.random.default_rng(5).uniform(-0.5, 1.5, (100, 2))
    assert np.max(np.abs(prob_valid(post, T) - mc_prob(post, T))) <= 0.005


def test_logistic_gaussian_limits():
    # zero variance reduces to the plain logistic
    m = np.linspace(-6, 6, 25)
    np.testing.assert_allclose(logistic_gaussian(m, 0.0), expit(m), atol=1e-12)
    np.testing.assert_allclose(logistic_gaussian(0.0, 7.0), 0.5, atol=1e-12)
    p = logistic_gaussian(m, 2.0)
    assert np.all(np.diff(p) > 0) and np.all((p > 0) & (p < 1))


def test_logistic_gaussian_vs_sampling():
    rng = np.random.default_rng(6)
    for mean, var, temp in [(0.7, 0.3, 1.0), (-2.0, 4.0, 1.0), (0.05, 0.01, 0.01), (1.0, 1e-6, 0.01)]:
        a = mean + np.sqrt(var) * rng.standard_normal(2_000_000)
        assert logistic_gaussian(mean, var, temp)[0] == pytest.approx(np.mean(expit(a / temp)), abs=2e-3)


def test_noiseless_half_space():
    X, labels = half_space_data(100, 7)
    post = fit_constraint(X, labels, ConstraintHyperparams(likelihood="step_approx"), NetworkConfig(), seed=7)
    p = prob_valid_noiseless(post, [[0.1, 0.1], [0.9, 0.9]])
    assert p[0] > 0.99 and p[1] < 0.01
    with pytest.raises(ValueError):
        prob_valid_noiseless(fit_constraint(X, labels, ConstraintHyperparams(), SMALL, seed=7), X)


def test_boundary_is_one_half():
    X, labels = half_space_data(40, 8)
    post = fit_constraint(X, labels, ConstraintHyperparams(likelihood="step_approx"), SMALL, seed=8)
    # find a point with zero mean activation along a segment
    t = np.linspace(0, 1, 2001)
    seg = np.column_stack([t, t])
    mean, _ = activation_moments(post, post.design(seg))
    i = np.argmin(np.abs(mean))
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, 2000)]
    root = optimize.brentq(lambda s: activation_moments(post, post.design([[s, s]]))[0][0], lo, hi, xtol=1e-14)
    assert prob_valid(post, [[root, root]])[0] == pytest.approx(0.5, abs=1e-9)


def test_refit_with_adds_labels():
    X, labels = half_space_data(20, 9)
    post = fit_constraint(X, labels, ConstraintHyperparams(), SMALL, seed=9)
    grown = refit_with(post, [[0.9, 0.9]], [0.0])
    assert grown.labels.size == 21 and grown.basis_net is post.basis_net
    assert prob_valid(grown, [[0.9, 0.9]])[0] < prob_valid(post, [[0.9, 0.9]])[0]


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        ConstraintHyperparams(0.0)
    with pytest.raises(ValueError):
        ConstraintHyperparams(likelihood="probit")
