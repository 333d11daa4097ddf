"""k-VARs: hard clustering of multivariate time series by Gaussian VAR likelihood.

Each cluster ``k`` is a VAR of block order ``p_k``::

    Y_t = A_k0 + A_k1 Y_{t-1} + ... + A_kp Y_{t-p} + e_t,   e_t ~ N(0, Sigma_k)

stored as ``a = [A_k0, A_k1, ..., A_kp]`` (``m x (1 + m p)``).  All
clusters are scored on the common rows ``t = p+1 .. T`` with ``p`` the
largest order in play, so per-series scores are comparable across clusters.

Computation follows the QR route: every series' regressor block is
factored once, pooled coefficient fits only touch the small triangular
factors, and the per-series scores go through forward substitution
against the Cholesky factor of ``Sigma_k``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .data import Assignment, Dataset, build_regressors, validate_dataset
from .engine import (
    StopMode,
    StopRule,
    run_kmle,
)
from .exceptions import (
    DegenerateCluster,
    OrderTooLarge,
    RankDeficient,
    SingularSigma,
    ThresholdNotMet,
    TooFewSeries,
    ValidationError,
)

__all__ = [
    "KVARs",
    "QrCache",
    "VarFamily",
    "VarParams",
    "fit_series",
    "fit_sigma",
    "fit_var",
    "init_random",
    "precompute_qr",
    "run_kvars",
    "score_series",
    "stopping_check",
]

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
# pivot^2 / diagonal below this marks a numerically singular matrix
SINGULAR_RTOL = 1e-12
RIDGE_SCALE = 1e-10


def _cholesky(mat, *, what, ridge=False, scale=None, cluster=None):
    """Lower Cholesky factor of a symmetric matrix, or raise/jitter when singular.

    Returns ``(mat, chol)``; ``mat`` differs from the input only when ridge
    jitter was applied.
    """
    mat = 0.5 * (mat + mat.T)
    dim = mat.shape[0]
    diag = np.diag(mat).copy()
    ref = np.maximum(diag, 0.0)
    if scale is not None:
        ref = np.maximum(ref, scale)
    try:
        chol = np.linalg.cholesky(mat)
        ok = np.all(np.diag(chol) ** 2 > SINGULAR_RTOL * ref) and np.all(ref > 0)
    except np.linalg.LinAlgError:
        chol, ok = None, False
    if ok:
        return mat, chol

    exc_type = SingularSigma if what == "sigma" else RankDeficient
    if not ridge:
        raise exc_type(f"{what} matrix is singular", cluster=cluster)
    tr = float(np.trace(mat))
    delta = RIDGE_SCALE * tr / dim if tr > 0 else RIDGE_SCALE
    warnings.warn(f"{what} matrix singular; adding ridge {delta:.3g}", RuntimeWarning, stacklevel=3)
    mat = mat + delta * np.eye(dim)
    try:
        return mat, np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise exc_type(f"{what} matrix singular even after ridge", cluster=cluster) from None


@dataclass(frozen=True)
class VarParams:
    """One cluster's VAR: coefficients ``a``, noise covariance ``sigma`` and its Cholesky factor."""

    a: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray
    p: int

    @classmethod
    def build(cls, a, sigma, p=None, *, ridge=False, scale=None) -> "VarParams":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        m = a.shape[0]
        if p is None:
            p, rem = divmod(a.shape[1] - 1, m)
            if rem:
                raise ValidationError(f"coefficient shape {a.shape} is not m x (1 + m p)")
        if a.shape != (m, 1 + m * p):
            raise ValidationError(f"coefficient shape {a.shape} does not match m={m}, p={p}")
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if sigma.shape != (m, m):
            raise ValidationError(f"Sigma shape {sigma.shape}, expected {(m, m)}")
        sigma, chol = _cholesky(sigma, what="sigma", ridge=ridge, scale=scale)
        return cls(a=a, sigma=sigma, chol=chol, p=int(p))

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def intercept(self) -> np.ndarray:
        return self.a[:, 0]

    def lag(self, ell: int) -> np.ndarray:
        m = self.m
        return self.a[:, 1 + (ell - 1) * m : 1 + ell * m]

    def companion(self) -> np.ndarray:
        m, p = self.m, self.p
        comp = np.zeros((m * p, m * p))
        if p:
            comp[:m, :] = self.a[:, 1:]
            comp[m:, :-m] = np.eye(m * (p - 1))
        return comp

    def spectral_radius(self) -> float:
        if self.p == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.companion()))))

    def to_dict(self) -> dict:
        return {
            "A": {"shape": list(self.a.shape), "data": self.a.ravel().tolist()},
            "Sigma": {"shape": list(self.sigma.shape), "data": self.sigma.ravel().tolist()},
            "p": self.p,
        }

    @classmethod
    def from_dict(cls, d, ridge=False) -> "VarParams":
        a = np.asarray(d["A"]["data"], dtype=float).reshape(d["A"]["shape"])
        s = np.asarray(d["Sigma"]["data"], dtype=float).reshape(d["Sigma"]["shape"])
        return cls.build(a, s, d["p"], ridge=ridge)


@dataclass(frozen=True)
class QrCache:
    """Factored regressors of one series.

    ``r`` (``q x q``, ``q = 1 + m p``) and ``yq = Q' Y`` come from the thin
    QR of the regressor block; ``perp`` is the ``m x m`` triangular factor
    of the part of ``Y`` orthogonal to the regressors.  For any
    coefficients ``a`` the residual Gram matrix is ``W' W`` with
    ``W = [yq - r a'; perp]``.
    """

    r: np.ndarray
    yq: np.ndarray
    perp: np.ndarray
    p: int
    rows: int
    centered_ss: float
    rank_deficient: bool

    @property
    def gram(self) -> np.ndarray:
        return self.r.T @ self.r


def _pad_rows(mat, rows):
    if mat.shape[0] >= rows:
        return mat[:rows]
    return np.vstack([mat, np.zeros((rows - mat.shape[0], mat.shape[1]))])


def _qr_one(series, p, start) -> QrCache:
    block = build_regressors(series, p, start=start)
    x, y = block.x, block.y
    rows, q = x.shape
    m = y.shape[1]
    qmat, r = np.linalg.qr(x, mode="reduced")
    yq = qmat.T @ y
    perp = np.linalg.qr(y - qmat @ yq, mode="r")
    r = _pad_rows(r, q)
    yq = _pad_rows(yq, q)
    perp = _pad_rows(perp, m)

    d = np.abs(np.diag(r))
    rank_deficient = rows < q or d.min() <= np.sqrt(SINGULAR_RTOL) * max(d.max(), 1e-300)
    centered = float(np.sum(perp**2) + np.sum(yq**2) - np.sum(yq[0] ** 2))
    return QrCache(r=r, yq=yq, perp=perp, p=p, rows=rows,
                   centered_ss=max(centered, 0.0), rank_deficient=bool(rank_deficient))


def precompute_qr(dataset, p: int, start: Optional[int] = None, n_jobs=None) -> List[QrCache]:
    """Factor every series' regressor block of order ``p`` (rows from ``start + 1``)."""
    dataset = validate_dataset(dataset)
    start = p if start is None else start
    if start > dataset.t - 2:
        raise OrderTooLarge(f"order {start} too large for T={dataset.t}")
    if n_jobs in (None, 1):
        return [_qr_one(s, p, start) for s in dataset.series]
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_qr_one)(s, p, start) for s in dataset.series
    )


def fit_var(caches: Sequence[QrCache], p: Optional[int] = None, *, ridge=False) -> np.ndarray:
    """Pooled least-squares coefficients ``a`` (``m x (1 + m p)``) for a cluster.

    Solves ``(sum r'r) a' = sum r' yq`` through a Cholesky factorisation
    of the pooled Gram matrix.
    """
    if not caches:
        raise ValidationError("cannot fit a VAR to an empty cluster")
    if p is not None and any(c.p != p for c in caches):
        raise ValidationError("caches were built for a different order")
    gram = sum(c.r.T @ c.r for c in caches)
    rhs = sum(c.r.T @ c.yq for c in caches)
    gram, chol = _cholesky(gram, what="regressor Gram", ridge=ridge)
    coef_t = linalg.cho_solve((chol, True), rhs)
    return coef_t.T


def residual_blocks(caches: Sequence[QrCache], a) -> List[np.ndarray]:
    """Compact residual blocks ``W`` with ``W'W`` equal to each series' residual Gram."""
    a = np.asarray(a, dtype=float)
    return [np.vstack([c.yq - c.r @ a.T, c.perp]) for c in caches]


def fit_sigma(blocks, rows: int, cluster_size: Optional[int] = None, *, ridge=False, scale=None):
    """Pooled noise covariance from residual blocks.

    ``blocks`` are residual matrices (full ``(T-p) x m`` blocks or the
    compact form from :func:`residual_blocks`).  Each is reduced to its
    triangular QR factor ``V`` and ``Sigma = sum V'V / (rows * size)``.
    Raises :class:`SingularSigma` unless ``ridge`` is set.
    """
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    if not blocks:
        raise ValidationError("no residual blocks")
    size = len(blocks) if cluster_size is None else cluster_size
    if size < 1:
        raise ValidationError(f"cluster size must be >= 1, got {size}")
    m = blocks[0].shape[1]
    acc = np.zeros((m, m))
    for b in blocks:
        if b.shape[1] != m:
            raise ValidationError("residual blocks differ in dimension")
        v = np.linalg.qr(b, mode="r")
        acc += v.T @ v
    sigma = acc / (rows * size)
    sigma, _ = _cholesky(sigma, what="sigma", ridge=ridge, scale=scale)
    return sigma


def score_series(series, params: VarParams, p_common: Optional[int] = None) -> float:
    """Score ``D`` of one series under one cluster model (lower is a better fit).

    ``D = rows * log|Sigma| + sum_t e_t' Sigma^{-1} e_t`` over rows
    ``t = p_common+1 .. T``; the series log-likelihood is
    ``-(D + rows * m * log(2 pi)) / 2``.
    """
    p_common = params.p if p_common is None else p_common
    block = build_regressors(series, params.p, start=p_common)
    resid = block.y - block.x @ params.a.T
    xi = linalg.solve_triangular(params.chol, resid.T, lower=True)
    rows = resid.shape[0]
    logdet = 2.0 * np.sum(np.log(np.diag(params.chol)))
    return float(rows * logdet + np.sum(xi * xi))


def fit_series(cache: QrCache, *, ridge=False) -> VarParams:
    """Single-series VAR fit straight from its QR factors."""
    if cache.rank_deficient and not ridge:
        raise RankDeficient("series regressors are rank deficient")
    if cache.rank_deficient:
        a = fit_var([cache], ridge=True)
    else:
        a = linalg.solve_triangular(cache.r, cache.yq, lower=False).T
    blocks = residual_blocks([cache], a)
    scale = cache.centered_ss / (cache.rows * cache.perp.shape[0])
    sigma = fit_sigma(blocks, cache.rows, 1, ridge=ridge, scale=scale)
    return VarParams.build(a, sigma, cache.p, ridge=ridge)


class VarFamily:
    """Gaussian VAR of a fixed order as a cluster model over series indices."""

    def __init__(self, dataset, p: int, p_common: Optional[int] = None, *,
                 ridge=False, caches=None, n_jobs=None):
        self.dataset = validate_dataset(dataset)
        self.p = int(p)
        self.p_common = self.p if p_common is None else int(p_common)
        if self.p_common < self.p:
            raise ValidationError("p_common must be >= p")
        self.ridge = ridge
        self.caches = caches if caches is not None else precompute_qr(
            self.dataset, self.p, self.p_common, n_jobs=n_jobs)
        self.rows = self.dataset.t - self.p_common
        self._r = np.stack([c.r for c in self.caches])
        self._yq = np.stack([c.yq for c in self.caches])
        self._perp = np.stack([c.perp for c in self.caches])

    @property
    def m(self):
        return self.dataset.m

    def scores(self, items, params: VarParams) -> np.ndarray:
        idx = np.asarray(items, dtype=np.intp)
        top = self._yq[idx] - self._r[idx] @ params.a.T
        w = np.concatenate([top, self._perp[idx]], axis=1)  # (n, q+m, m)
        n, h, m = w.shape
        xi = linalg.solve_triangular(params.chol, w.transpose(2, 0, 1).reshape(m, n * h), lower=True)
        quad = np.sum((xi * xi).reshape(m, n, h), axis=(0, 2))
        logdet = 2.0 * np.sum(np.log(np.diag(params.chol)))
        return self.rows * logdet + quad

    def log_density(self, item, params: VarParams) -> float:
        return float(self.loglik_matrix([item], [params])[0, 0])

    def loglik_matrix(self, items, params_list) -> np.ndarray:
        const = self.rows * self.m * LOG_2PI
        cols = [-0.5 * (self.scores(items, prm) + const) for prm in params_list]
        return np.column_stack(cols)

    def fit_mle(self, items) -> VarParams:
        caches = [self.caches[i] for i in items]
        a = fit_var(caches, ridge=self.ridge)
        scale = sum(c.centered_ss for c in caches) / (self.rows * self.m * len(caches))
        sigma = fit_sigma(residual_blocks(caches, a), self.rows, len(caches),
                          ridge=self.ridge, scale=scale)
        return VarParams.build(a, sigma, self.p, ridge=self.ridge)

    def fit_single(self, n) -> VarParams:
        return fit_series(self.caches[n], ridge=self.ridge)

    def params_distance(self, a: VarParams, b: VarParams) -> float:
        return max(np.linalg.norm(a.a - b.a), np.linalg.norm(a.sigma - b.sigma))


def stopping_check(prev, nxt, rule: StopRule) -> bool:
    """Apply the tolerance rule.

    Under ``param`` mode ``prev``/``nxt`` are lists of :class:`VarParams`
    and every cluster must move less than ``epsilon`` in both ``a`` and
    ``sigma`` (Frobenius norm).  Under ``loglik`` mode they are total
    log-likelihoods.
    """
    if rule.mode is StopMode.PARAM_TOL:
        if len(prev) != len(nxt):
            raise ValidationError("parameter lists differ in length")
        return all(
            max(np.linalg.norm(a.a - b.a), np.linalg.norm(a.sigma - b.sigma)) < rule.epsilon
            for a, b in zip(prev, nxt)
        )
    return abs(float(nxt) - float(prev)) < rule.epsilon


def _families(dataset, k, p, *, ridge=False, n_jobs=None):
    orders = [int(p)] * k if np.ndim(p) == 0 else [int(x) for x in p]
    if len(orders) != k:
        raise ValidationError(f"{len(orders)} orders given for {k} clusters")
    p_common = max(orders)
    if p_common > dataset.t - 2:
        raise OrderTooLarge(f"order {p_common} too large for T={dataset.t}")
    by_order = {q: VarFamily(dataset, q, p_common, ridge=ridge, n_jobs=n_jobs)
                for q in sorted(set(orders))}
    fams = [by_order[q] for q in orders]
    return fams[0] if len(by_order) == 1 else fams


def _family_list(family, k):
    return family if isinstance(family, list) else [family] * k


def init_random(dataset, k: int, p, seed=None, mode: str = "random", true_labels=None,
                *, ridge=False, family=None) -> List[VarParams]:
    """Seed every cluster with the VAR fitted to one chosen series.

    ``mode="random"`` draws ``k`` distinct series uniformly;
    ``mode="oracle"`` draws one series from each true cluster.  A chosen
    series whose own fit is degenerate is replaced by another draw, up to
    ``N`` attempts in total.
    """
    dataset = validate_dataset(dataset)
    n = dataset.n_series
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if k > n:
        raise TooFewSeries(f"cannot seed {k} clusters from {n} series")
    fams = _family_list(family if family is not None else
                        _families(dataset, k, p, ridge=ridge), k)
    rng = np.random.default_rng(seed)

    if mode == "random":
        order = rng.permutation(n)
        pools = None
    elif mode == "oracle":
        if true_labels is None:
            raise ValidationError("oracle initialisation needs true labels")
        true_labels = np.asarray(true_labels)
        if true_labels.size != n:
            raise ValidationError(f"{true_labels.size} true labels for {n} series")
        groups = np.unique(true_labels)
        if groups.size != k:
            raise TooFewSeries(f"oracle init needs {k} true clusters, found {groups.size}")
        pools = [list(rng.permutation(np.flatnonzero(true_labels == g))) for g in groups]
    else:
        raise ValidationError(f"unknown init mode {mode!r}")

    params: List[VarParams] = []
    attempts = 0
    cursor = 0
    for j in range(k):
        while True:
            if pools is None:
                if cursor >= n:
                    raise TooFewSeries("ran out of series with a nondegenerate fit")
                cand = int(order[cursor])
                cursor += 1
            else:
                if not pools[j]:
                    raise TooFewSeries(f"no series in true cluster {j} has a nondegenerate fit")
                cand = int(pools[j].pop(0))
            try:
                params.append(fams[j].fit_single(cand))
                break
            except DegenerateCluster:
                attempts += 1
                logger.debug("series %d unusable as a seed", cand)
                if attempts >= n:
                    raise
    return params


def _one_run(dataset, k, p, fam, init, stop, seed, true_labels, ridge, strict, record_history):
    if isinstance(init, str):
        init_params = init_random(dataset, k, p, seed, init, true_labels,
                                  ridge=ridge, family=fam)
    else:
        init_params = list(init)
    return run_kmle(np.arange(dataset.n_series), fam, k, init_params, stop,
                    seed=None, strict=strict, record_history=record_history)


def run_kvars(dataset, k: int, p=1, init="random", stop: StopRule = StopRule(), seed=None,
              restarts: int = 1, true_labels=None, *, ridge=False, strict=False,
              loglik_threshold: Optional[float] = None, n_jobs=None,
              record_history=False, return_all=False):
    """Cluster ``dataset`` into ``k`` VAR models.

    Runs ``restarts`` independent initialisations (seeds derived from
    ``seed``) and returns the run with the largest final log-likelihood.
    With ``loglik_threshold`` only runs reaching it compete; if none does,
    :class:`ThresholdNotMet` is raised.  Restarts that hit a degenerate
    cluster are dropped; if every restart fails the first error is
    re-raised.  ``return_all=True`` returns ``(best, all_results)``.
    """
    dataset = validate_dataset(dataset)
    if restarts < 1:
        raise ValidationError(f"restarts must be >= 1, got {restarts}")
    if k > dataset.n_series:
        raise TooFewSeries(f"k={k} exceeds N={dataset.n_series}")
    fam = _families(dataset, k, p, ridge=ridge, n_jobs=n_jobs)
    if not isinstance(init, str):
        restarts = 1
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(restarts)

    def attempt(ss):
        try:
            res = _one_run(dataset, k, p, fam, init, stop, np.random.default_rng(ss),
                           true_labels, ridge, strict, record_history)
            return res, None
        except DegenerateCluster as exc:
            return None, exc

    if n_jobs in (None, 1) or restarts == 1:
        outcomes = [attempt(ss) for ss in seeds]
    else:
        outcomes = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(attempt)(ss) for ss in seeds)

    results = [r for r, _ in outcomes if r is not None]
    if not results:
        raise next(e for _, e in outcomes if e is not None)
    candidates = results
    if loglik_threshold is not None:
        candidates = [r for r in results if r.loglik >= loglik_threshold]
        if not candidates:
            raise ThresholdNotMet(
                f"no restart reached log-likelihood {loglik_threshold}; "
                f"best was {max(r.loglik for r in results):.6g}"
            )
    # first maximum wins, so results do not depend on the worker count
    best = max(candidates, key=lambda r: r.loglik)
    best.seed = seed
    return (best, results) if return_all else best


def _as_dataset(X):
    if isinstance(X, Dataset):
        return X
    X = np.asarray(X, dtype=float) if not isinstance(X, list) else X
    return validate_dataset(X)


class KVARs(ClusterMixin, BaseEstimator):
    """Hard clustering of multivariate time series with one VAR model per cluster.

    Parameters
    ----------
    n_clusters : int, default=2
    order : int or sequence of int, default=1
        VAR block order, shared or per cluster.
    init : {"random", "oracle"} or list of VarParams, default="random"
        ``"oracle"`` seeds each cluster from a series of the matching true
        cluster and needs ``y`` in :meth:`fit`.
    n_init : int, default=1
        Independent restarts; the highest final log-likelihood wins.
    stop : {"loglik", "param"}, default="loglik"
    tol : float, default=1e-6
    max_iter : int, default=200
    ridge : bool, default=False
        Jitter singular Gram/covariance matrices instead of failing.
    strict : bool, default=False
        Fail on an emptied cluster instead of re-seeding it.
    loglik_threshold : float, optional
        Discard restarts ending below this log-likelihood.
    n_jobs : int, optional
    random_state : int or None

    Attributes
    ----------
    labels_ : ndarray of shape (n_series,)
    coef_ : list of ndarray, each ``m x (1 + m p_k)``
    sigma_ : ndarray of shape (n_clusters, m, m)
    loglik_ : float
    loglik_trace_ : list of float
    n_iter_ : int
    stop_reason_ : str
    certificate_ : PartialMaxCertificate
    """

    def __init__(self, n_clusters=2, order=1, init="random", n_init=1, stop="loglik",
                 tol=1e-6, max_iter=200, ridge=False, strict=False,
                 loglik_threshold=None, n_jobs=None, random_state=None):
        self.n_clusters = n_clusters
        self.order = order
        self.init = init
        self.n_init = n_init
        self.stop = stop
        self.tol = tol
        self.max_iter = max_iter
        self.ridge = ridge
        self.strict = strict
        self.loglik_threshold = loglik_threshold
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, y=None):
        ds = _as_dataset(X)
        rule = StopRule(self.stop, self.tol, self.max_iter)
        result = run_kvars(ds, self.n_clusters, self.order, self.init, rule,
                           seed=self.random_state, restarts=self.n_init, true_labels=y,
                           ridge=self.ridge, strict=self.strict,
                           loglik_threshold=self.loglik_threshold, n_jobs=self.n_jobs)
        self.result_ = result
        self.params_ = list(result.params)
        self.labels_ = result.labels.copy()
        self.coef_ = [prm.a for prm in result.params]
        self.sigma_ = np.stack([prm.sigma for prm in result.params])
        self.loglik_ = result.loglik
        self.loglik_trace_ = list(result.trace)
        self.n_iter_ = result.iters
        self.stop_reason_ = result.stop_reason.value
        self.certificate_ = result.certificate
        self.p_common_ = max(prm.p for prm in result.params)
        return self

    def transform(self, X):
        """Scores ``D`` of every series under every cluster (``n_series x n_clusters``)."""
        check_is_fitted(self)
        ds = _as_dataset(X)
        return np.array([[score_series(s, prm, self.p_common_) for prm in self.params_]
                         for s in ds.series])

    def predict(self, X):
        return np.argmin(self.transform(X), axis=1)

    def score(self, X, y=None):
        """Classification log-likelihood of ``X`` with each series in its best cluster."""
        ds = _as_dataset(X)
        d = self.transform(ds)
        rows = ds.t - self.p_common_
        return float(-0.5 * np.sum(d.min(axis=1) + rows * ds.m * LOG_2PI))

    def assignment(self) -> Assignment:
        check_is_fitted(self)
        return Assignment(self.labels_, self.n_clusters)
