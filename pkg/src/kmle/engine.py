"""Coordinate-ascent solver for hard maximum-likelihood clustering.

The solver alternates two half-steps over a generic cluster model family:

* label step: every item joins the cluster under which its log-density is
  largest;
* parameter step: every cluster's parameters are refit by maximum
  likelihood on its current members.

Neither half-step can lower the total log-likelihood, so the trace is
nondecreasing and, because the label space is finite, the iteration halts.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .data import Assignment
from .exceptions import DegenerateCluster, NonFinite, ValidationError

__all__ = [
    "ClusterModelFamily",
    "FitResult",
    "PartialMaxCertificate",
    "StopMode",
    "StopReason",
    "StopRule",
    "check_partial_maximum",
    "loglik_matrix",
    "rescue_empty_clusters",
    "run_kmle",
    "tau_step",
    "theta_step",
    "total_loglik",
]

logger = logging.getLogger(__name__)

ASCENT_RTOL = 1e-9


@runtime_checkable
class ClusterModelFamily(Protocol):
    """What the solver needs from a cluster model.

    Families may additionally define ``loglik_matrix(items, params_list)``
    returning the ``N x K`` log-density matrix in one vectorised call.
    """

    def log_density(self, item, params) -> float: ...

    def fit_mle(self, items: Sequence) -> Any: ...

    def params_distance(self, a, b) -> float: ...


class StopMode(str, enum.Enum):
    PARAM_TOL = "param"
    LOGLIK_TOL = "loglik"


class StopReason(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    LABEL_FIXED_POINT = "LabelFixedPoint"


@dataclass(frozen=True)
class StopRule:
    mode: StopMode = StopMode.LOGLIK_TOL
    epsilon: float = 1e-6
    max_iters: int = 200

    def __post_init__(self):
        object.__setattr__(self, "mode", StopMode(self.mode))
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValidationError(f"epsilon must be finite and > 0, got {self.epsilon}")
        if int(self.max_iters) < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class PartialMaxCertificate:
    tau_stable: bool
    theta_stable: bool

    def __bool__(self):
        return self.tau_stable and self.theta_stable


@dataclass
class FitResult:
    assignment: Assignment
    params: list
    trace: List[float]
    iters: int
    stop_reason: StopReason
    certificate: Optional[PartialMaxCertificate] = None
    history: List[Assignment] = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def labels(self) -> np.ndarray:
        return self.assignment.labels

    @property
    def loglik(self) -> float:
        return self.trace[-1] if self.trace else -np.inf


def _family_for(family, k):
    if isinstance(family, (list, tuple)):
        return family[k]
    return family


def loglik_matrix(items, family, params_list) -> np.ndarray:
    """``N x K`` matrix of per-item, per-cluster log-densities.

    ``family`` is one family shared by all clusters or a list holding one
    family per cluster.
    """
    if isinstance(family, (list, tuple)):
        cols = [loglik_matrix(items, fam, [params]) for fam, params in zip(family, params_list)]
        return np.hstack(cols) if cols else np.empty((len(items), 0))
    batched = getattr(family, "loglik_matrix", None)
    if batched is not None:
        return np.asarray(batched(items, params_list), dtype=float)
    out = np.empty((len(items), len(params_list)))
    for k, params in enumerate(params_list):
        for n, item in enumerate(items):
            out[n, k] = family.log_density(item, params)
    return out


def total_loglik(loglik: np.ndarray, assignment: Assignment) -> float:
    return float(loglik[np.arange(len(assignment)), assignment.labels].sum())


def tau_step(loglik) -> Assignment:
    """Assign each row to its highest-scoring column; ties go to the lowest index."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim != 2 or loglik.shape[1] < 1:
        raise ValidationError("log-likelihood matrix must be N x K with K >= 1")
    if not np.all(np.isfinite(loglik)):
        raise NonFinite("log-likelihood matrix contains NaN or Inf")
    return Assignment(np.argmax(loglik, axis=1), loglik.shape[1])


def rescue_empty_clusters(assignment: Assignment, loglik) -> Assignment:
    """Re-seed each empty cluster with the worst-fitting movable item.

    The worst fit is the item whose log-density under its own cluster is
    lowest, restricted to items whose cluster would not itself become
    empty.
    """
    labels = assignment.labels.copy()
    k = assignment.k
    if labels.size < k:
        raise DegenerateCluster(
            f"cannot fill {k} clusters from {labels.size} items"
        )
    loglik = np.asarray(loglik, dtype=float)
    for empty in np.flatnonzero(np.bincount(labels, minlength=k) == 0):
        sizes = np.bincount(labels, minlength=k)
        fit = loglik[np.arange(labels.size), labels].copy()
        fit[sizes[labels] < 2] = np.inf
        worst = int(np.argmin(fit))
        logger.debug("cluster %d empty, re-seeding with item %d", empty, worst)
        labels[worst] = empty
    return Assignment(labels, k)


def theta_step(items, assignment: Assignment, family) -> list:
    """Refit every cluster on its members.

    Raises :class:`DegenerateCluster` for an empty cluster; callers that
    want rescue run :func:`rescue_empty_clusters` first.
    """
    if len(items) != len(assignment):
        raise ValidationError(
            f"{len(assignment)} labels for {len(items)} items"
        )
    params = []
    for k in range(assignment.k):
        idx = assignment.members(k)
        if idx.size == 0:
            raise DegenerateCluster(f"cluster {k} is empty", cluster=k)
        members = [items[i] for i in idx]
        try:
            params.append(_family_for(family, k).fit_mle(members))
        except DegenerateCluster as exc:
            if exc.cluster is None:
                exc.cluster = k
            raise
    return params


def _params_moved(family, old, new) -> float:
    return max(_family_for(family, k).params_distance(a, b)
               for k, (a, b) in enumerate(zip(old, new)))


def _ties_ok(loglik, assignment, rtol=1e-12) -> bool:
    own = loglik[np.arange(len(assignment)), assignment.labels]
    best = loglik.max(axis=1)
    return bool(np.all(own >= best - rtol * np.maximum(1.0, np.abs(best))))


def check_partial_maximum(items, family, result: FitResult, epsilon: float = 1e-6,
                          loglik: Optional[np.ndarray] = None) -> PartialMaxCertificate:
    """Report whether one more label step or parameter step would move anything."""
    if loglik is None:
        loglik = loglik_matrix(items, family, result.params)
    tau_stable = _ties_ok(loglik, result.assignment)
    try:
        refit = theta_step(items, result.assignment, family)
        theta_stable = _params_moved(family, result.params, refit) <= epsilon
    except DegenerateCluster:
        theta_stable = False
    return PartialMaxCertificate(tau_stable=tau_stable, theta_stable=bool(theta_stable))


def run_kmle(items, family, k: int, init_params, stop: StopRule = StopRule(),
             seed=None, strict: bool = False, record_history: bool = False) -> FitResult:
    """Alternate label and parameter steps until a stop rule fires.

    Parameters
    ----------
    items : sequence
        The data items handed to ``family``.
    family : ClusterModelFamily
    k : int
        Number of clusters.
    init_params : list
        ``k`` initial parameter objects.
    stop : StopRule
        Tolerance rule checked after every parameter step.  A rule only
        ends the run once the following label step is also stable.
    seed : int, optional
        Stored on the result for provenance; the solver is deterministic.
    strict : bool
        Raise :class:`DegenerateCluster` on an emptied cluster instead of
        re-seeding it.
    record_history : bool
        Keep the label vector of every iteration.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if len(init_params) != k:
        raise ValidationError(f"expected {k} initial parameter sets, got {len(init_params)}")
    if len(items) < 1:
        raise ValidationError("no items to cluster")

    params = list(init_params)
    loglik = loglik_matrix(items, family, params)
    assignment = None
    prev_total = None
    trace: List[float] = []
    history: List[Assignment] = []
    seen = set()
    iters = 0
    reason = StopReason.MAX_ITERS

    while True:
        new_assignment = tau_step(loglik)
        if assignment is not None and new_assignment == assignment:
            reason = StopReason.LABEL_FIXED_POINT
            break
        if new_assignment in seen:
            # a revisited label vector can only recur with equal likelihood
            logger.debug("label vector revisited at iteration %d", iters)
            reason = StopReason.LABEL_FIXED_POINT
            break
        if iters >= stop.max_iters:
            reason = StopReason.MAX_ITERS
            break

        if np.any(new_assignment.sizes == 0):
            if strict:
                empty = int(np.flatnonzero(new_assignment.sizes == 0)[0])
                raise DegenerateCluster(f"cluster {empty} emptied", cluster=empty)
            new_assignment = rescue_empty_clusters(new_assignment, loglik)
        if prev_total is None:
            prev_total = total_loglik(loglik, new_assignment)

        seen.add(new_assignment)
        new_params = theta_step(items, new_assignment, family)
        new_loglik = loglik_matrix(items, family, new_params)
        total = total_loglik(new_loglik, new_assignment)
        iters += 1
        trace.append(total)
        if record_history:
            history.append(new_assignment)

        if total < prev_total - ASCENT_RTOL * max(1.0, abs(prev_total)):
            logger.warning("log-likelihood fell from %.12g to %.12g at iteration %d",
                           prev_total, total, iters)

        if stop.mode is StopMode.PARAM_TOL:
            fired = _params_moved(family, params, new_params) < stop.epsilon
        else:
            fired = abs(total - prev_total) < stop.epsilon

        assignment, params, loglik, prev_total = new_assignment, new_params, new_loglik, total
        if fired and tau_step(loglik) == assignment:
            reason = StopReason.CONVERGED
            break

    if assignment is None:
        # max_iters reached before any parameter step; cannot happen with max_iters >= 1
        raise ValidationError("solver stopped before the first iteration")

    result = FitResult(
        assignment=assignment,
        params=params,
        trace=trace,
        iters=iters,
        stop_reason=reason,
        history=history,
        seed=seed,
    )
    result.certificate = check_partial_maximum(
        items, family, result, epsilon=stop.epsilon, loglik=loglik
    )
    return result
