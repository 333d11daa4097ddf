"""Regular exponential families as cluster models.

Each family is written in natural parameters ``theta``::

    ln p(x; theta) = theta' x - psi(theta) + ln p0(x)

with expectation parameter ``mu = grad psi(theta)``.  The same log-density
splits as ``-d_phi(x, mu) + ln b_phi(x)``, where ``d_phi`` is the Bregman
divergence of ``phi`` (the convex conjugate of ``psi``) and ``b_phi`` does
not depend on ``theta``.  Hard clustering with any of these families is
therefore Bregman hard clustering; with a known common variance the
spherical Gaussian reproduces Lloyd's k-means.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, xlogy
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .engine import StopRule, run_kmle, loglik_matrix
from .exceptions import BoundaryMLE, OutOfSupport, ValidationError

__all__ = [
    "DiagonalGaussian",
    "KBregman",
    "Poisson",
    "SphericalGaussian",
    "bregman_divergence",
    "decomposition_residual",
    "fit_mle",
    "log_density",
    "make_family",
]

LOG_2PI = np.log(2.0 * np.pi)


class ExpFamily:
    """Shared machinery; subclasses supply the family-specific formulas."""

    name = "expfam"

    # -- natural / expectation parameters -----------------------------
    def log_partition(self, theta):
        raise NotImplementedError

    def mean(self, theta):
        raise NotImplementedError

    def natural(self, mu):
        raise NotImplementedError

    def variance(self, theta):
        """Hessian of the log-partition, i.e. the covariance of ``x``."""
        raise NotImplementedError

    def log_base(self, x):
        """``ln p0(x)``."""
        raise NotImplementedError

    def phi(self, mu):
        raise NotImplementedError

    def log_b(self, x):
        """``ln b_phi(x)`` in closed form."""
        raise NotImplementedError

    def check_support(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise OutOfSupport("non-finite observation")
        return x

    # -- densities ------------------------------------------------------
    def log_density(self, x, theta):
        x = self.check_support(x)
        theta = np.asarray(theta, dtype=float)
        return float(np.sum(theta * x) - self.log_partition(theta) + self.log_base(x))

    def score(self, x, theta):
        return np.asarray(x, dtype=float) - self.mean(theta)

    def bregman_divergence(self, x, mu):
        x = self.check_support(x)
        mu = np.asarray(mu, dtype=float)
        grad = self.natural(mu)
        return float(self.phi(x) - self.phi(mu) - np.sum(grad * (x - mu)))

    def fit_mle(self, items):
        items = np.asarray([self.check_support(x) for x in items], dtype=float)
        if items.shape[0] == 0:
            raise ValidationError("cannot fit an empty cluster")
        return self.natural(items.mean(axis=0))

    def params_distance(self, a, b):
        return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))

    def loglik_matrix(self, items, params_list):
        x = np.asarray(items, dtype=float)
        if x.ndim == 1:
            x = x[:, np.newaxis]
        thetas = np.asarray(params_list, dtype=float).reshape(len(params_list), -1)
        psi = np.array([self.log_partition(t) for t in thetas])
        base = self.log_base_rows(x)
        return x @ thetas.T - psi[np.newaxis, :] + base[:, np.newaxis]

    def log_base_rows(self, x):
        return np.array([self.log_base(row) for row in x])


class SphericalGaussian(ExpFamily):
    """Gaussian with known covariance ``sigma2 * I``."""

    name = "spherical_gaussian"

    def __init__(self, sigma2=1.0):
        if not sigma2 > 0:
            raise ValidationError(f"sigma2 must be positive, got {sigma2}")
        self.sigma2 = float(sigma2)

    def log_partition(self, theta):
        return 0.5 * self.sigma2 * float(np.sum(np.square(theta)))

    def mean(self, theta):
        return self.sigma2 * np.asarray(theta, dtype=float)

    def natural(self, mu):
        return np.asarray(mu, dtype=float) / self.sigma2

    def variance(self, theta):
        d = np.size(theta)
        return self.sigma2 * np.eye(d)

    def log_base(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * x.size * (LOG_2PI + np.log(self.sigma2)) - 0.5 * float(np.sum(x * x)) / self.sigma2

    def log_base_rows(self, x):
        d = x.shape[1]
        return -0.5 * d * (LOG_2PI + np.log(self.sigma2)) - 0.5 * np.einsum("ij,ij->i", x, x) / self.sigma2

    def phi(self, mu):
        mu = np.asarray(mu, dtype=float)
        return 0.5 * float(np.sum(mu * mu)) / self.sigma2

    def log_b(self, x):
        return -0.5 * np.size(x) * (LOG_2PI + np.log(self.sigma2))


class DiagonalGaussian(ExpFamily):
    """Gaussian with known diagonal covariance ``diag(variances)``."""

    name = "diagonal_gaussian"

    def __init__(self, variances=(1.0,)):
        v = np.atleast_1d(np.asarray(variances, dtype=float))
        if not np.all(v > 0):
            raise ValidationError("variances must be positive")
        self.variances = v

    def log_partition(self, theta):
        return 0.5 * float(np.sum(self.variances * np.square(theta)))

    def mean(self, theta):
        return self.variances * np.asarray(theta, dtype=float)

    def natural(self, mu):
        return np.asarray(mu, dtype=float) / self.variances

    def variance(self, theta):
        return np.diag(self.variances)

    def check_support(self, x):
        x = super().check_support(x)
        if x.shape[-1] != self.variances.size and self.variances.size != 1:
            raise OutOfSupport(f"expected dimension {self.variances.size}, got {x.shape[-1]}")
        return x

    def log_base(self, x):
        x = np.asarray(x, dtype=float)
        v = np.broadcast_to(self.variances, x.shape)
        return float(-0.5 * np.sum(LOG_2PI + np.log(v)) - 0.5 * np.sum(x * x / v))

    def phi(self, mu):
        mu = np.asarray(mu, dtype=float)
        return 0.5 * float(np.sum(mu * mu / self.variances))

    def log_b(self, x):
        v = np.broadcast_to(self.variances, np.shape(x))
        return float(-0.5 * np.sum(LOG_2PI + np.log(v)))


class Poisson(ExpFamily):
    """Independent Poisson counts, natural parameter ``theta = ln(rate)``."""

    name = "poisson"

    def check_support(self, x):
        x = super().check_support(x)
        if np.any(x < 0) or np.any(x != np.floor(x)):
            raise OutOfSupport("Poisson observations must be nonnegative integers")
        return x

    def log_partition(self, theta):
        return float(np.sum(np.exp(theta)))

    def mean(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def natural(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any(mu <= 0):
            raise BoundaryMLE("Poisson mean on the boundary of the parameter domain")
        return np.log(mu)

    def variance(self, theta):
        return np.diag(np.atleast_1d(np.exp(theta)))

    def log_base(self, x):
        return -float(np.sum(gammaln(np.asarray(x, dtype=float) + 1.0)))

    def log_base_rows(self, x):
        return -gammaln(x + 1.0).sum(axis=1)

    def phi(self, mu):
        mu = np.asarray(mu, dtype=float)
        return float(np.sum(xlogy(mu, mu) - mu))

    def log_b(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.sum(xlogy(x, x) - x - gammaln(x + 1.0)))


_FAMILIES = {
    "spherical_gaussian": SphericalGaussian,
    "diagonal_gaussian": DiagonalGaussian,
    "poisson": Poisson,
}


def make_family(name, **kwargs) -> ExpFamily:
    if isinstance(name, ExpFamily):
        return name
    try:
        return _FAMILIES[name](**kwargs)
    except KeyError:
        raise ValidationError(f"unknown family {name!r}; choose from {sorted(_FAMILIES)}") from None


def log_density(family: ExpFamily, x, theta) -> float:
    return family.log_density(x, theta)


def bregman_divergence(family: ExpFamily, x, mu) -> float:
    return family.bregman_divergence(x, mu)


def decomposition_residual(family: ExpFamily, x, theta) -> float:
    """Gap between the log-density and its divergence-plus-base split."""
    lhs = family.log_density(x, theta)
    rhs = -family.bregman_divergence(x, family.mean(theta)) + family.log_b(x)
    return abs(lhs - rhs)


def fit_mle(family: ExpFamily, items):
    return family.fit_mle(items)


class KBregman(ClusterMixin, BaseEstimator):
    """Hard clustering under an exponential-family likelihood.

    Parameters
    ----------
    n_clusters : int, default=2
    family : {"spherical_gaussian", "diagonal_gaussian", "poisson"}, default="spherical_gaussian"
    variance : float or array-like, default=1.0
        Known variance for the Gaussian families.
    init : "random" or array-like of shape (n_clusters, n_features), default="random"
        Initial cluster means (expectation parameters).  ``"random"``
        picks distinct data rows.
    max_iter : int, default=200
    tol : float, default=1e-6
    stop : {"loglik", "param"}, default="loglik"
    strict : bool, default=False
        Raise on an emptied cluster instead of re-seeding it.
    random_state : int, RandomState or None
    """

    def __init__(self, n_clusters=2, family="spherical_gaussian", variance=1.0,
                 init="random", max_iter=200, tol=1e-6, stop="loglik",
                 strict=False, random_state=None):
        self.n_clusters = n_clusters
        self.family = family
        self.variance = variance
        self.init = init
        self.max_iter = max_iter
        self.tol = tol
        self.stop = stop
        self.strict = strict
        self.random_state = random_state

    def _family(self):
        if self.family == "spherical_gaussian":
            return SphericalGaussian(self.variance)
        if self.family == "diagonal_gaussian":
            return DiagonalGaussian(self.variance)
        return make_family(self.family)

    def fit(self, X, y=None, record_history=False):
        X = check_array(X, ensure_min_samples=self.n_clusters)
        fam = self._family()
        if isinstance(self.init, str):
            if self.init != "random":
                raise ValidationError(f"unknown init {self.init!r}")
            rng = check_random_state(self.random_state)
            centers = X[rng.choice(X.shape[0], self.n_clusters, replace=False)]
        else:
            centers = check_array(self.init)
            if centers.shape != (self.n_clusters, X.shape[1]):
                raise ValidationError(
                    f"init must have shape {(self.n_clusters, X.shape[1])}"
                )
        init_params = [fam.natural(c) for c in centers]
        rule = StopRule(self.stop, self.tol, self.max_iter)
        result = run_kmle(list(X), fam, self.n_clusters, init_params, rule,
                          strict=self.strict, record_history=record_history)

        self.family_ = fam
        self.result_ = result
        self.labels_ = result.labels.copy()
        self.natural_params_ = np.array(result.params)
        self.cluster_centers_ = np.array([fam.mean(t) for t in result.params])
        self.loglik_trace_ = list(result.trace)
        self.n_iter_ = result.iters
        self.stop_reason_ = result.stop_reason.value
        self.certificate_ = result.certificate
        return self

    def transform(self, X):
        """Bregman divergence from every row to every cluster mean."""
        check_is_fitted(self)
        X = check_array(X)
        return np.array([[self.family_.bregman_divergence(x, mu) for mu in self.cluster_centers_]
                         for x in X])

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X)
        ll = loglik_matrix(list(X), self.family_, list(self.natural_params_))
        return np.argmax(ll, axis=1)

    def score(self, X, y=None):
        """Total classification log-likelihood of ``X`` under predicted labels."""
        check_is_fitted(self)
        X = check_array(X)
        ll = loglik_matrix(list(X), self.family_, list(self.natural_params_))
        return float(ll.max(axis=1).sum())

