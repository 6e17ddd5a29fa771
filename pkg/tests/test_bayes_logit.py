import csv
import warnings

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats

from sesaa import bayes_logit as bl


def synthetic(n, beta, rng, scale=1.0):
    X = rng.normal(0, scale, (n, len(beta) - 1)) + rng.normal(0, 1, len(beta) - 1)
    p = 1 / (1 + np.exp(-(beta[0] + X @ beta[1:])))
    return X, (rng.random(n) < p).astype(float)


def oracle_objective(beta, X, y, spec):
    """Independent log posterior: scipy densities, no shared helpers."""
    eta = beta[0] + X @ beta[1:]
    loglik = stats.bernoulli.logpmf(y, 1 / (1 + np.exp(-eta))).sum()
    theta0 = beta[0] + X.mean(axis=0) @ beta[1:]
    lp = stats.t.logpdf(theta0, spec.prior_df, scale=spec.prior_scale_intercept)
    lp += stats.t.logpdf(beta[1:], spec.prior_df, scale=spec.prior_scale).sum()
    return loglik + lp


def nelder_mead_max(X, y, spec, x0):
    f = lambda b: -oracle_objective(b, X, y, spec)
    best = optimize.minimize(f, x0, method="Nelder-Mead",
                             options=dict(xatol=1e-10, fatol=1e-13, maxiter=40000, maxfev=40000))
    for _ in range(3):  # restarts shake Nelder-Mead out of a collapsed simplex
        best = optimize.minimize(f, best.x, method="Nelder-Mead",
                                 options=dict(xatol=1e-10, fatol=1e-13, maxiter=40000, maxfev=40000))
    return best


def test_objective_matches_derivative_free_optimum():
    rng = np.random.default_rng(7)
    X, y = synthetic(50, np.array([0.3, 1.0, -0.5, 0.8]), rng)
    spec = bl.LogitSpec(("a", "b", "c"))
    m = bl.fit(spec, X, y)
    nm = nelder_mead_max(X, y, spec, np.zeros(4))
    ours = bl.penalized_objective(m.coef, X, y, spec)
    assert ours == pytest.approx(oracle_objective(m.coef, X, y, spec), abs=1e-9)
    assert abs(ours - (-nm.fun)) < 1e-6
    assert ours >= -nm.fun - 1e-9
    np.testing.assert_allclose(m.coef, nm.x, atol=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.5, 1.0, 3.0]))
def test_gradient_matches_finite_differences(seed, df):
    rng = np.random.default_rng(seed)
    X, y = synthetic(60, np.array([0.2, 0.7, -0.4]), rng, scale=3.0)
    spec = bl.LogitSpec(("a", "b"), prior_df=df)
    beta = rng.normal(0, 1.5, 3)
    g = bl.penalized_gradient(beta, X, y, spec)
    h = 1e-5
    fd = np.array([(bl.penalized_objective(beta + h * e, X, y, spec)
                    - bl.penalized_objective(beta - h * e, X, y, spec)) / (2 * h) for e in np.eye(3)])
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(15, 300))
def test_converged_gradient_is_tiny(seed, n):
    rng = np.random.default_rng(seed)
    X, y = synthetic(n, np.array([-1.0, 0.8, 0.1]), rng, scale=2.0)
    spec = bl.LogitSpec(("a", "b"))
    m = bl.fit(spec, X, y)
    assert m.converged
    assert np.max(np.abs(bl.penalized_gradient(m.coef, X, y, spec))) < 1e-8
    np.testing.assert_allclose(m.cov, m.cov.T, atol=1e-14)
    assert np.linalg.eigvalsh(m.cov).min() > 0


def test_intercept_only_symmetric():
    y = np.r_[np.ones(50), np.zeros(50)]
    m = bl.fit(bl.LogitSpec(), np.empty((100, 0)), y)
    assert abs(m.coef[0]) < 0.05 and m.converged


def test_complete_separation_is_finite():
    X = np.arange(10, dtype=float).reshape(-1, 1)
    y = (X[:, 0] >= 5).astype(float)
    spec = bl.LogitSpec(("x",))
    m = bl.fit(spec, X, y)
    assert m.converged and np.all(np.isfinite(m.coef)) and np.abs(m.coef).max() < 50
    assert np.max(np.abs(bl.penalized_gradient(m.coef, X, y, spec))) < 1e-8


def test_flat_prior_matches_mle():
    rng = np.random.default_rng(11)
    X, y = synthetic(200, np.array([0.5, -1.0, 0.6]), rng)
    spec = bl.LogitSpec(("a", "b"), prior_scale=np.inf, prior_scale_intercept=np.inf)
    m = bl.fit(spec, X, y)
    mle = sm.Logit(y, sm.add_constant(X)).fit(disp=0, tol=1e-12, maxiter=200)
    np.testing.assert_allclose(m.coef, mle.params, atol=1e-4)
    np.testing.assert_allclose(m.cov, mle.cov_params(), rtol=1e-3)


def test_bad_inputs():
    spec = bl.LogitSpec(("a",))
    with pytest.raises(bl.FitError):
        bl.fit(spec, np.array([[np.nan], [1.0]]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        bl.fit(spec, np.ones((3, 2)), np.array([0.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        bl.LogitSpec(prior_scale=0)
    flat = bl.LogitSpec(("a", "b"), prior_scale=np.inf, prior_scale_intercept=np.inf)
    x = np.linspace(0, 1, 20)
    with pytest.raises(bl.FitError):
        bl.fit(flat, np.column_stack([x, x]), (np.arange(20) % 3 == 0).astype(float))


def test_zero_covariance_draw_is_the_mode(rng):
    m = bl.LogitModel(bl.LogitSpec(("a",)), np.array([1.0, -2.0]), np.zeros((2, 2)), 10, True)
    assert np.array_equal(bl.draw_posterior(m, rng), m.coef)


def test_draw_moments():
    cov = np.array([[0.04, 0.01], [0.01, 0.09]])
    m = bl.LogitModel(bl.LogitSpec(("a",)), np.array([0.5, 1.5]), cov, 100, True)
    rng = np.random.default_rng(0)
    D = np.array([bl.draw_posterior(m, rng) for _ in range(100_000)])
    se = np.sqrt(np.diag(cov) / D.shape[0])
    assert np.all(np.abs(D.mean(axis=0) - m.coef) < 4 * se)
    assert np.linalg.norm(np.cov(D, rowvar=False) - cov) / np.linalg.norm(cov) < 0.05
    a = bl.draw_posterior(m, np.random.default_rng(5))
    b = bl.draw_posterior(m, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_non_psd_covariance_rejected(rng):
    m = bl.LogitModel(bl.LogitSpec(("a",)), np.zeros(2), np.array([[1.0, 0], [0, -1.0]]), 1, True)
    with pytest.raises(bl.FitError):
        bl.draw_posterior(m, rng)


def test_predict_examples():
    assert bl.predict_prob([-12.95, 0.20, 1.47], [40, 3.5])[0] == pytest.approx(0.5486, abs=5e-4)
    assert np.all(bl.predict_prob(np.zeros(3), np.random.default_rng(0).normal(size=(5, 2))) == 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p = bl.predict_prob([-1000.0], np.empty((1, 0)))
    assert p[0] == 0.0 and np.isfinite(p).all()


@given(st.floats(-5, 5), st.floats(0.01, 3), st.floats(-10, 10), st.floats(0.01, 5))
def test_predict_increasing(b0, b1, x, dx):
    assert bl.predict_prob([b0, b1], [x + dx])[0] >= bl.predict_prob([b0, b1], [x])[0]


def test_parameter_recovery_over_seeds():
    truth = np.array([-0.5, 0.8, -0.3, 0.4])
    spec = bl.LogitSpec(("a", "b", "c"))
    hits = 0
    for seed in range(20):
        X, y = synthetic(27_000, truth, np.random.default_rng(1000 + seed))
        m = bl.fit(spec, X, y)
        hits += bool(np.all(np.abs(m.coef - truth) <= 3 * m.sd))
    assert hits >= 19


def test_coefficient_table(tmp_path):
    rng = np.random.default_rng(2)
    X, y = synthetic(100, np.array([0.0, 1.0]), rng)
    m = bl.fit(bl.LogitSpec(("lsat",)), X, y)
    rows = bl.coefficient_rows(m, group="black", tier=1)
    assert [r["term"] for r in rows] == ["intercept", "lsat"]
    path = tmp_path / "coef.csv"
    bl.write_coefficient_table(rows, path)
    back = list(csv.DictReader(open(path)))
    assert float(back[1]["estimate"]) == m.coef[1]
    assert back[0]["group"] == "black"
