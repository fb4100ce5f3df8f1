"""Gaussian mixtures fit by EM, with optional hard assignment constraints.

Constrained rows keep an exactly one-hot responsibility row through every
iteration; free rows get the usual posterior. The reported objective is the
observed-data log-likelihood of the free rows plus the complete-data
log-likelihood of the constrained rows, which EM never decreases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import ConfigError, Dataset, NumericalError

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_COLLAPSE_EPS = 1e-10


@dataclass
class GaussianMixture:
    weights: np.ndarray       # (K,) simplex
    means: np.ndarray         # (K, d)
    covariances: np.ndarray   # (K, d, d) SPD

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        if self.covariances.ndim == 2:
            self.covariances = self.covariances[None, :, :]
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.covariances.shape != (k, d, d):
            raise ConfigError("mixture parameter shapes disagree")
        if np.any(self.weights < -1e-12) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigError("mixture weights must form a simplex")

    @property
    def num_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "format": "drfgmm-mixture",
            "version": 1,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "GaussianMixture":
        try:
            return cls(np.array(raw["weights"]), np.array(raw["means"]),
                       np.array(raw["covariances"]))
        except KeyError as exc:
            raise ConfigError(f"mixture document missing field {exc}") from exc


def _features(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.features
    X = np.asarray(data, dtype=np.float64)
    return X[None, :] if X.ndim == 1 else X


def log_gaussian_pdf(x, mean, cov) -> np.ndarray | float:
    """Log density of N(mean, cov) at x (a point or a matrix of rows)."""
    X = _features(x)
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    d = mean.shape[0]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is not positive definite") from exc
    dev = X - mean
    sol = solve_triangular(chol, dev.T, lower=True)
    maha = np.einsum("ij,ij->j", sol, sol)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    out = -0.5 * (d * _LOG_2PI + logdet + maha)
    if np.asarray(x).ndim == 1:
        return float(out[0])
    return out


def gaussian_pdf(x, mean, cov):
    """Density of N(mean, cov) at x."""
    return np.exp(log_gaussian_pdf(x, mean, cov))


def _log_joint(X, gm) -> np.ndarray:
    lj = np.empty((X.shape[0], gm.num_components))
    with np.errstate(divide="ignore"):
        logw = np.log(gm.weights)
    for j in range(gm.num_components):
        lj[:, j] = logw[j] + log_gaussian_pdf(X, gm.means[j], gm.covariances[j])
    return lj


def _posteriors(lj):
    """Row-normalize exp(lj); rows that underflow everywhere become uniform."""
    top = lj.max(axis=1)
    dead = ~np.isfinite(top)
    safe_top = np.where(dead, 0.0, top)
    shifted = np.exp(lj - safe_top[:, None])
    shifted[dead] = 1.0
    totals = shifted.sum(axis=1)
    resp = shifted / totals[:, None]
    lognorm = safe_top + np.log(totals)
    lognorm[dead] = -np.inf
    return resp, lognorm, int(dead.sum())


def _apply_constraints(resp, constraints):
    if constraints is None:
        return resp
    fixed = constraints.assignments >= 0
    if fixed.any():
        resp[fixed] = 0.0
        resp[fixed, constraints.assignments[fixed]] = 1.0
    return resp


def e_step(data, gm: GaussianMixture, constraints=None) -> np.ndarray:
    """Responsibility matrix for data under gm; constrained rows are one-hot."""
    X = _features(data)
    resp, _, dead = _posteriors(_log_joint(X, gm))
    if dead:
        log.warning("e_step: %d rows underflowed every component; set uniform", dead)
    return _apply_constraints(resp, constraints)


def _biased_cov(X):
    dev = X - X.mean(axis=0)
    return dev.T @ dev / X.shape[0]


def _m_step_impl(X, resp, cov_regularizer):
    n, d = X.shape
    k = resp.shape[1]
    totals = resp.sum(axis=0)
    collapsed = np.flatnonzero(totals < _COLLAPSE_EPS)
    weights = np.empty(k)
    means = np.empty((k, d))
    covs = np.empty((k, d, d))
    eye = cov_regularizer * np.eye(d)
    for j in range(k):
        if j in collapsed:
            continue
        means[j] = resp[:, j] @ X / totals[j]
        dev = X - means[j]
        covs[j] = (resp[:, j][:, None] * dev).T @ dev / totals[j] + eye
        weights[j] = totals[j] / n
    if collapsed.size:
        # revive each dead component at a sample the model currently explains worst
        worst_order = np.argsort(resp.max(axis=1), kind="stable")
        fallback_cov = _biased_cov(X) + eye
        for slot, sample in zip(collapsed, worst_order):
            means[slot] = X[sample]
            covs[slot] = fallback_cov
            weights[slot] = 1.0 / n
        weights /= weights.sum()
        log.warning("m_step: re-seeded %d collapsed component(s)", collapsed.size)
    return GaussianMixture(weights, means, covs), int(collapsed.size)


def m_step(data, resp, cov_regularizer: float = 1e-6) -> GaussianMixture:
    """Weighted mean/covariance/weight update; covariances get +reg*I."""
    X = _features(data)
    gm, _ = _m_step_impl(X, np.asarray(resp, dtype=np.float64), cov_regularizer)
    return gm


def _farthest_points(X, have, count):
    """Greedy max-min-distance picks, seeded from the point farthest from the mean."""
    chosen = list(have)
    picks = []
    for _ in range(count):
        if chosen:
            ref = np.stack(chosen)
            d2 = ((X[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        else:
            d2 = ((X - X.mean(axis=0)) ** 2).sum(axis=1)
        idx = int(np.argmax(d2))
        picks.append(X[idx])
        chosen.append(X[idx])
    return picks


def _initialize(X, constraints, k, cov_regularizer):
    n, d = X.shape
    eye = cov_regularizer * np.eye(d)
    means = np.empty((k, d))
    covs = np.empty((k, d, d))
    raw = np.empty(k)
    assignments = (constraints.assignments if constraints is not None
                   else np.full(n, -1, dtype=np.int64))
    unseeded = []
    seeded_means = []
    for j in range(k):
        members = X[assignments == j]
        if len(members) > 0:
            means[j] = members.mean(axis=0)
            covs[j] = _biased_cov(members) + eye
            raw[j] = len(members)
            seeded_means.append(means[j])
        else:
            unseeded.append(j)
    if unseeded:
        pool = X[assignments < 0]
        if len(pool) == 0:
            pool = X
        fallback_cov = _biased_cov(X) + eye
        for j, mean in zip(unseeded, _farthest_points(pool, seeded_means, len(unseeded))):
            means[j] = mean
            covs[j] = fallback_cov
            raw[j] = n / k
    return GaussianMixture(raw / raw.sum(), means, covs)


@dataclass
class EMResult:
    mixture: GaussianMixture
    responsibilities: np.ndarray
    labels: np.ndarray
    log_likelihoods: list
    underflow_rows: int = 0
    collapse_events: int = 0

    @property
    def iterations(self) -> int:
        return len(self.log_likelihoods)


def _constrained_loglik(lj, lognorm, constraints):
    if constraints is None:
        return float(lognorm.sum())
    fixed = constraints.assignments >= 0
    total = float(lognorm[~fixed].sum())
    if fixed.any():
        total += float(lj[fixed, constraints.assignments[fixed]].sum())
    return total


def fit_em(data, constraints, config) -> EMResult:
    """Run EM to convergence of the (constraint-aware) log-likelihood.

    Initial parameters come from per-component statistics of the constrained
    rows; components without any constrained row start at farthest-point picks
    over the free rows. Stops when |delta logL| < em_tol * |logL| or at
    em_max_iter.
    """
    X = _features(data)
    n = X.shape[0]
    k = config.num_clusters
    has_fixed = constraints is not None and np.any(constraints.assignments >= 0)
    if not has_fixed and k > n:
        raise ConfigError(f"cannot fit {k} components to {n} samples unseeded")
    if constraints is not None and constraints.assignments.shape != (n,):
        raise ConfigError("constraints do not align with the data")

    gm = _initialize(X, constraints, k, config.cov_regularizer)
    trace = []
    resp = None
    previous = None
    underflow = 0
    collapses = 0
    stale = False
    for _ in range(config.em_max_iter):
        lj = _log_joint(X, gm)
        resp, lognorm, dead = _posteriors(lj)
        resp = _apply_constraints(resp, constraints)
        underflow += dead
        loglik = _constrained_loglik(lj, lognorm, constraints)
        trace.append(loglik)
        if previous is not None and abs(loglik - previous) < config.em_tol * abs(loglik):
            stale = False
            break
        previous = loglik
        gm, ncol = _m_step_impl(X, resp, config.cov_regularizer)
        collapses += ncol
        stale = True
    if stale:
        # loop ended on an M-step; refresh responsibilities for the final model
        lj = _log_joint(X, gm)
        resp, lognorm, dead = _posteriors(lj)
        resp = _apply_constraints(resp, constraints)
        underflow += dead
        trace.append(_constrained_loglik(lj, lognorm, constraints))
    labels = resp.argmax(axis=1).astype(np.int64)
    return EMResult(gm, resp, labels, trace, underflow, collapses)


def mixture_density(gm: GaussianMixture, x):
    """Mixture density sum_j w_j N(x; mu_j, Sigma_j), stable in log space."""
    X = _features(x)
    lj = _log_joint(X, gm)
    top = lj.max(axis=1)
    safe_top = np.where(np.isfinite(top), top, 0.0)
    dens = np.exp(safe_top) * np.exp(lj - safe_top[:, None]).sum(axis=1)
    dens = np.where(np.isfinite(top), dens, 0.0)
    if np.asarray(x).ndim == 1:
        return float(dens[0])
    return dens
