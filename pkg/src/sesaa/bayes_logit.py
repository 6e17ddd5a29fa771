"""Logistic regression with weakly informative Student-t priors.

Coefficients on (uncentered) predictors get independent t priors with
location 0 and scale ``prior_scale``.  The intercept prior is placed on the
intercept of the *centered* model, i.e. on the linear predictor evaluated at
the predictor means.  The mode is found by IRLS where every t prior is
replaced, at each iteration, by the normal whose variance is the current
approximate-EM estimate ``(beta**2 + df * scale**2) / (df + 1)``; a few exact
Newton steps finish the job once the EM iterations have settled.  The
posterior is summarised by a Gaussian centred at the mode with covariance
equal to the inverse penalized observed information.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln

MAX_ITER = 200
GRAD_TOL = 1e-8
JITTER = 1e-10


class FitError(RuntimeError):
    """Raised when a logistic model cannot be fitted."""


@dataclass(frozen=True)
class LogitSpec:
    """Predictor names and prior settings for one logistic regression."""

    names: tuple[str, ...] = ()
    prior_scale: float = 2.5
    prior_scale_intercept: float = 10.0
    prior_df: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not (self.prior_scale > 0 and self.prior_scale_intercept > 0):
            raise ValueError("prior scales must be positive")
        if not self.prior_df > 0:
            raise ValueError("prior_df must be positive")

    @property
    def terms(self) -> tuple[str, ...]:
        return ("intercept",) + self.names


@dataclass(frozen=True)
class LogitModel:
    spec: LogitSpec
    coef: np.ndarray
    cov: np.ndarray
    n_obs: int
    converged: bool
    n_iter: int = 0
    center: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def predict(self, X) -> np.ndarray:
        return predict_prob(self.coef, X)


def _t_logpdf(x, df, scale):
    if np.ndim(scale) == 0 and np.isinf(scale):
        return np.zeros_like(x)
    z = x / scale
    return (gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * np.log(df * np.pi)
            - np.log(scale) - (df + 1) / 2 * np.log1p(z * z / df))


def _t_grad(x, df, scale):
    if np.ndim(scale) == 0 and np.isinf(scale):
        return np.zeros_like(x)
    return -(df + 1) * x / (df * scale**2 + x * x)


def _t_hess(x, df, scale):
    if np.ndim(scale) == 0 and np.isinf(scale):
        return np.zeros_like(x)
    a = df * scale**2
    return -(df + 1) * (a - x * x) / (a + x * x) ** 2


def _scales(spec: LogitSpec, p: int) -> np.ndarray:
    return np.array([spec.prior_scale_intercept] + [spec.prior_scale] * p, dtype=float)


def _check_inputs(spec: LogitSpec, X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, len(spec.names)) if spec.names else X.reshape(-1, 0)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    if X.shape[1] != len(spec.names):
        raise ValueError(f"expected {len(spec.names)} predictors, got {X.shape[1]}")
    if X.shape[0] < 1:
        raise FitError("no rows to fit")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise FitError("non-finite input")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("y must be 0/1")
    return X, y


def _centered_params(beta, center):
    theta = np.array(beta, dtype=float)
    theta[0] = beta[0] + center @ beta[1:]
    return theta


def penalized_objective(beta, X, y, spec: LogitSpec, center=None) -> float:
    """Log-likelihood plus log prior density at ``beta`` (intercept first)."""
    X, y = _check_inputs(spec, X, y)
    beta = np.asarray(beta, dtype=float)
    if center is None:
        center = X.mean(axis=0)
    eta = beta[0] + X @ beta[1:]
    loglik = np.sum(y * eta - np.logaddexp(0.0, eta))
    theta = _centered_params(beta, center)
    df = spec.prior_df
    logprior = _t_logpdf(theta[0], df, spec.prior_scale_intercept)
    logprior += np.sum(_t_logpdf(theta[1:], df, spec.prior_scale))
    return float(loglik + logprior)


def penalized_gradient(beta, X, y, spec: LogitSpec, center=None) -> np.ndarray:
    """Analytic gradient of :func:`penalized_objective` in the original parameters."""
    X, y = _check_inputs(spec, X, y)
    beta = np.asarray(beta, dtype=float)
    if center is None:
        center = X.mean(axis=0)
    eta = beta[0] + X @ beta[1:]
    r = y - expit(eta)
    g = np.concatenate([[r.sum()], X.T @ r])
    theta = _centered_params(beta, center)
    g0 = _t_grad(theta[0], spec.prior_df, spec.prior_scale_intercept)
    g[0] += g0
    g[1:] += _t_grad(theta[1:], spec.prior_df, spec.prior_scale) + center * g0
    return g


def _from_centered(theta, cov_c, center):
    p = center.shape[0]
    B = np.eye(p + 1)
    B[0, 1:] = -center
    return B @ theta, B @ cov_c @ B.T


def fit(spec: LogitSpec, X, y, max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> LogitModel:
    """Find the posterior mode and Laplace covariance.

    ``X`` holds the predictors only (no intercept column); returned
    coefficients are ordered ``(intercept, *spec.names)``.
    """
    X, y = _check_inputs(spec, X, y)
    n, p = X.shape
    center = X.mean(axis=0)
    Xc = np.column_stack([np.ones(n), X - center])
    scales = _scales(spec, p)
    df = spec.prior_df
    finite = np.isfinite(scales)

    def grad_c(theta, prob):
        g = Xc.T @ (y - prob)
        g[finite] += -(df + 1) * theta[finite] / (df * scales[finite] ** 2 + theta[finite] ** 2)
        return g

    def objective_c(theta):
        eta = Xc @ theta
        val = np.sum(y * eta - np.logaddexp(0.0, eta))
        for j in np.flatnonzero(finite):
            val += _t_logpdf(theta[j], df, scales[j])
        return val

    def info_c(theta, prob, exact):
        w = prob * (1.0 - prob)
        H = (Xc * w[:, None]).T @ Xc
        d = np.zeros(p + 1)
        if exact:
            d[finite] = -_t_hess(theta[finite], df, scales[finite])
        else:
            d[finite] = (df + 1) / (theta[finite] ** 2 + df * scales[finite] ** 2)
        return H + np.diag(d)

    # logit of the (shrunk) base rate is a safe starting point
    ybar = (y.sum() + 0.5) / (n + 1.0)
    theta = np.zeros(p + 1)
    theta[0] = np.log(ybar / (1 - ybar))
    obj = objective_c(theta)
    converged = False
    polish = False
    it = 0
    for it in range(1, max_iter + 1):
        prob = expit(Xc @ theta)
        g = grad_c(theta, prob)
        g_orig = g.copy()
        g_orig[1:] += center * g[0]
        if np.max(np.abs(g_orig)) < tol:
            converged = True
            break
        step = None
        if polish:
            try:
                step = np.linalg.solve(_chol_checked(info_c(theta, prob, True)), g)
            except np.linalg.LinAlgError:
                step = None
        if step is None:
            try:
                step = np.linalg.solve(info_c(theta, prob, False), g)
            except np.linalg.LinAlgError as exc:
                raise FitError("singular information matrix") from exc
        # step-halving keeps every iteration an ascent step
        t = 1.0
        while True:
            cand = theta + t * step
            cand_obj = objective_c(cand)
            if cand_obj >= obj - 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        if np.max(np.abs(cand - theta)) < 1e-6 * (1 + np.max(np.abs(theta))):
            polish = True
        theta, obj = cand, cand_obj

    prob = expit(Xc @ theta)
    info = info_c(theta, prob, True)
    cov_c = _invert_info(info)
    coef, cov = _from_centered(theta, cov_c, center)
    cov = 0.5 * (cov + cov.T)
    return LogitModel(spec=spec, coef=coef, cov=cov, n_obs=n, converged=converged,
                      n_iter=it, center=center)


def _chol_checked(M):
    np.linalg.cholesky(M)
    return M


def _invert_info(info):
    for ridge in (0.0, JITTER):
        try:
            L = np.linalg.cholesky(info + ridge * np.eye(info.shape[0]))
        except np.linalg.LinAlgError:
            continue
        Linv = np.linalg.inv(L)
        return Linv.T @ Linv
    raise FitError("singular information matrix at the mode")


def draw_posterior(model: LogitModel, rng: np.random.Generator) -> np.ndarray:
    """One draw from the Gaussian posterior approximation."""
    cov = model.cov
    vals, vecs = np.linalg.eigh(cov)
    if vals.size and vals.min() + JITTER < 0:
        raise FitError("posterior covariance is not positive semidefinite")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    z = rng.standard_normal(model.coef.shape[0])
    return model.coef + root @ z


def predict_prob(coef, X) -> np.ndarray:
    """Inverse logit of ``coef[0] + X @ coef[1:]``; saturates instead of overflowing."""
    coef = np.asarray(coef, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if coef.shape[0] > 1 else X.reshape(-1, 0)
    return expit(coef[0] + X @ coef[1:])


def coefficient_rows(model: LogitModel, **labels) -> list[dict]:
    """One row per term: ``labels`` plus term, estimate, sd."""
    return [dict(labels, term=term, estimate=float(b), sd=float(s))
            for term, b, s in zip(model.spec.terms, model.coef, model.sd)]


def write_coefficient_table(rows: Sequence[dict], path) -> None:
    rows = list(rows)
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
