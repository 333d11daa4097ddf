"""Choosing the number of clusters and the VAR order by BIC.

``BIC(K, p) = -2 log L + {K [(p + 1/2) m^2 + 3m/2] + N} log[N (T - p)]``

where ``log L`` is the best classification log-likelihood found for the
cell.  Cells are scored independently, so a full grid parallelises
trivially; cyclic descent instead alternates 1-D scans over ``K`` and
``p`` and may stop in a local minimum.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from .data import validate_dataset
from .engine import StopRule
from .exceptions import KMLEError, OrderTooLarge, TooFewSeries, ValidationError
from .kvars import KVARs, run_kvars

__all__ = [
    "BICSelector",
    "BicTable",
    "CellResult",
    "SolverConfig",
    "bic_penalty",
    "bic_score",
    "cyclic_descent",
    "grid_search",
    "parse_grid",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    restarts: int = 5
    stop: StopRule = StopRule()
    seed: Optional[int] = None
    init: str = "random"
    ridge: bool = False
    strict: bool = False
    n_jobs: Optional[int] = None

    def cell_seed(self, k, p):
        if self.seed is None:
            return None
        return np.random.SeedSequence([self.seed, k, p])


@dataclass(frozen=True)
class CellResult:
    k: int
    p: int
    bic: float
    loglik: float
    status: str = "ok"
    restarts: int = 0


def bic_penalty(k: int, p: int, m: int, n_series: int, t: int) -> float:
    if min(k, m, n_series, t) < 1 or p < 0 or p >= t:
        raise ValidationError("bic_penalty needs positive k, m, N, T and 0 <= p < T")
    n_params = k * ((p + 0.5) * m * m + 1.5 * m) + n_series
    return n_params * math.log(n_series * (t - p))


def bic_score(dataset, k: int, p: int, config: SolverConfig = SolverConfig()) -> CellResult:
    """Score one grid cell; failures come back as ``+inf`` with a reason."""
    ds = validate_dataset(dataset)
    if p > ds.t - 2:
        return CellResult(k, p, math.inf, -math.inf, "OrderTooLarge")
    if k > ds.n_series:
        return CellResult(k, p, math.inf, -math.inf, "TooFewSeries")
    # a single cluster has only one possible assignment
    restarts = 1 if k == 1 else config.restarts
    try:
        res = run_kvars(ds, k, p, config.init, config.stop, seed=config.cell_seed(k, p),
                        restarts=restarts, ridge=config.ridge, strict=config.strict)
    except (OrderTooLarge, TooFewSeries) as exc:
        return CellResult(k, p, math.inf, -math.inf, type(exc).__name__)
    except KMLEError as exc:
        logger.info("cell K=%d p=%d failed: %s", k, p, exc)
        return CellResult(k, p, math.inf, -math.inf, type(exc).__name__)
    score = -2.0 * res.loglik + bic_penalty(k, p, ds.m, ds.n_series, ds.t)
    return CellResult(k, p, score, res.loglik, "ok", restarts)


@dataclass
class BicTable:
    """BIC scores over a ``(K, p)`` grid; unvisited cells hold NaN."""

    k_values: Tuple[int, ...]
    p_values: Tuple[int, ...]
    cells: Dict[Tuple[int, int], CellResult] = field(default_factory=dict)
    path: list = field(default_factory=list)

    @property
    def scores(self) -> np.ndarray:
        out = np.full((len(self.k_values), len(self.p_values)), np.nan)
        for (k, p), cell in self.cells.items():
            out[self.k_values.index(k), self.p_values.index(p)] = cell.bic
        return out

    @property
    def best(self) -> Optional[Tuple[int, int]]:
        """Cell with the smallest finite score; ties go to smaller K, then smaller p."""
        finite = [c for c in self.cells.values() if np.isfinite(c.bic)]
        if not finite:
            return None
        cell = min(finite, key=lambda c: (c.bic, c.k, c.p))
        return cell.k, cell.p

    @property
    def best_cell(self) -> Optional[CellResult]:
        b = self.best
        return None if b is None else self.cells[b]

    def to_csv(self, fh=None) -> str:
        buf = fh if fh is not None else io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["K", "p", "bic", "loglik", "status"])
        for k in self.k_values:
            for p in self.p_values:
                c = self.cells.get((k, p))
                if c is not None:
                    writer.writerow([k, p, repr(float(c.bic)), repr(float(c.loglik)), c.status])
        return buf.getvalue() if fh is None else ""


def parse_grid(text: str) -> Tuple[int, ...]:
    """Parse ``start:step:end`` (inclusive), ``a,b,c`` or a single integer."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(x) for x in text.split(":")]
            if len(parts) == 2:
                start, stop = parts
                step = 1
            elif len(parts) == 3:
                start, step, stop = parts
            else:
                raise ValueError(text)
            if step <= 0 or stop < start:
                raise ValueError(text)
            values = tuple(range(start, stop + 1, step))
        else:
            values = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ValidationError(f"cannot parse grid {text!r}") from None
    if not values:
        raise ValidationError(f"empty grid {text!r}")
    return tuple(sorted(set(values)))


def _check_grids(k_grid, p_grid):
    k_grid = tuple(sorted(set(int(k) for k in k_grid)))
    p_grid = tuple(sorted(set(int(p) for p in p_grid)))
    if not k_grid or not p_grid:
        raise ValidationError("grids must be nonempty")
    if k_grid[0] < 1 or p_grid[0] < 0:
        raise ValidationError("grid values must satisfy K >= 1, p >= 0")
    return k_grid, p_grid


def _score_cells(ds, cells, config):
    if config.n_jobs in (None, 1) or len(cells) < 2:
        return [bic_score(ds, k, p, config) for k, p in cells]
    return Parallel(n_jobs=config.n_jobs, prefer="threads")(
        delayed(bic_score)(ds, k, p, config) for k, p in cells
    )


def grid_search(dataset, k_grid: Sequence[int], p_grid: Sequence[int],
                config: SolverConfig = SolverConfig()) -> BicTable:
    ds = validate_dataset(dataset)
    k_grid, p_grid = _check_grids(k_grid, p_grid)
    cells = [(k, p) for k in k_grid for p in p_grid]
    table = BicTable(k_grid, p_grid)
    for res in _score_cells(ds, cells, config):
        table.cells[(res.k, res.p)] = res
    return table


def cyclic_descent(dataset, k_grid: Sequence[int], p_grid: Sequence[int],
                   start: Tuple[int, int], config: SolverConfig = SolverConfig(),
                   max_sweeps: int = 20) -> BicTable:
    """Alternate a scan over ``K`` at fixed ``p`` with a scan over ``p`` at fixed ``K``.

    Stops when a full sweep leaves the incumbent unchanged.  ``path`` on
    the returned table lists the incumbent after every 1-D scan.
    """
    ds = validate_dataset(dataset)
    k_grid, p_grid = _check_grids(k_grid, p_grid)
    k0, p0 = int(start[0]), int(start[1])
    if k0 not in k_grid or p0 not in p_grid:
        raise ValidationError(f"start {start} is not on the grid")
    table = BicTable(k_grid, p_grid)

    def scan(cells):
        todo = [c for c in cells if c not in table.cells]
        for res in _score_cells(ds, todo, config):
            table.cells[(res.k, res.p)] = res
        return min((table.cells[c] for c in cells), key=lambda c: (c.bic, c.k, c.p))

    incumbent = scan([(k0, p0)])
    table.path.append((incumbent.k, incumbent.p))
    for _ in range(max_sweeps):
        before = (incumbent.k, incumbent.p)
        for axis in ("k", "p"):
            if axis == "k":
                cells = [(k, incumbent.p) for k in k_grid]
            else:
                cells = [(incumbent.k, p) for p in p_grid]
            cand = scan(cells)
            if (cand.bic, cand.k, cand.p) < (incumbent.bic, incumbent.k, incumbent.p):
                incumbent = cand
            table.path.append((incumbent.k, incumbent.p))
        if (incumbent.k, incumbent.p) == before:
            break
    return table


class BICSelector(BaseEstimator):
    """Pick ``(n_clusters, order)`` for :class:`~kmle.kvars.KVARs` by BIC, then refit.

    Parameters
    ----------
    k_grid, p_grid : sequence of int
    mode : {"grid", "cyclic"}, default="grid"
    start : (int, int), optional
        Starting cell for cyclic mode; defaults to the smallest cell.
    n_init : int, default=5
        Restarts per cell.
    tol, max_iter, stop, ridge, n_jobs, random_state
        Passed to the solver.
    """

    def __init__(self, k_grid=(2, 3, 4), p_grid=(1, 2), mode="grid", start=None, n_init=5,
                 tol=1e-6, max_iter=200, stop="loglik", ridge=False, n_jobs=None,
                 random_state=None):
        self.k_grid = k_grid
        self.p_grid = p_grid
        self.mode = mode
        self.start = start
        self.n_init = n_init
        self.tol = tol
        self.max_iter = max_iter
        self.stop = stop
        self.ridge = ridge
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, y=None):
        ds = validate_dataset(X)
        config = SolverConfig(restarts=self.n_init, stop=StopRule(self.stop, self.tol, self.max_iter),
                              seed=self.random_state, ridge=self.ridge, n_jobs=self.n_jobs)
        if self.mode == "grid":
            table = grid_search(ds, self.k_grid, self.p_grid, config)
        elif self.mode == "cyclic":
            start = self.start or (min(self.k_grid), min(self.p_grid))
            table = cyclic_descent(ds, self.k_grid, self.p_grid, start, config)
        else:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if table.best is None:
            raise ValidationError("every grid cell failed")
        self.table_ = table
        self.best_k_, self.best_p_ = table.best
        self.best_bic_ = table.best_cell.bic
        self.best_estimator_ = KVARs(
            n_clusters=self.best_k_, order=self.best_p_, n_init=self.n_init, stop=self.stop,
            tol=self.tol, max_iter=self.max_iter, ridge=self.ridge, n_jobs=self.n_jobs,
            random_state=config.cell_seed(self.best_k_, self.best_p_),
        ).fit(ds)
        self.labels_ = self.best_estimator_.labels_
        return self

    def predict(self, X):
        return self.best_estimator_.predict(X)
