"""Datasets of multivariate time series, hard assignments and regressor blocks.

A series is stored as an ``m x T`` matrix whose column ``t`` is the
observation ``Y_t``.  On disk a dataset is a directory holding
``manifest.json`` and one headerless CSV per series (``T`` rows by ``m``
columns).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import (
    Empty,
    LengthMismatch,
    MixedDims,
    NonFinite,
    OrderTooLarge,
    ValidationError,
)

__all__ = [
    "Assignment",
    "Dataset",
    "RegressorBlock",
    "build_regressors",
    "load_dataset",
    "save_dataset",
    "validate_dataset",
]


@dataclass(frozen=True)
class Dataset:
    """``N`` equal-length series stacked into a read-only ``(N, m, T)`` array."""

    series: np.ndarray
    ids: Optional[tuple] = None

    @property
    def n_series(self) -> int:
        return self.series.shape[0]

    @property
    def m(self) -> int:
        return self.series.shape[1]

    @property
    def t(self) -> int:
        return self.series.shape[2]

    @property
    def shape(self):
        return self.series.shape

    def __len__(self):
        return self.n_series

    def __getitem__(self, n):
        return self.series[n]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        ids = None if self.ids is None else tuple(self.ids[i] for i in index)
        return validate_dataset(self.series[index], ids=ids)


def validate_dataset(raw, ids: Optional[Sequence[str]] = None) -> Dataset:
    """Check and freeze a collection of ``m x T`` matrices.

    ``raw`` may be a list of 2-D arrays, a 3-D array ``(N, m, T)``, or an
    existing :class:`Dataset` (returned unchanged).  A 1-D entry is read
    as a scalar series (``m = 1``).
    """
    if isinstance(raw, Dataset):
        return raw
    if raw is None or len(raw) == 0:
        raise Empty("dataset contains no series")

    mats = []
    for n, x in enumerate(raw):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2:
            raise MixedDims(f"series {n} has {x.ndim} dimensions, expected 2")
        mats.append(x)

    m, t = mats[0].shape
    for n, x in enumerate(mats):
        if x.shape != (m, t):
            raise MixedDims(
                f"series {n} has shape {x.shape}, expected {(m, t)}"
            )
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"series {n} contains NaN or Inf")
    if m < 1 or t < 2:
        raise MixedDims(f"series need m >= 1 and T >= 2, got m={m}, T={t}")

    if ids is not None:
        ids = tuple(str(i) for i in ids)
        if len(ids) != len(mats):
            raise LengthMismatch(f"{len(ids)} ids for {len(mats)} series")

    series = np.stack(mats)
    series.setflags(write=False)
    return Dataset(series=series, ids=ids)


@dataclass(frozen=True)
class Assignment:
    """Hard cluster labels ``0..k-1``, one per series."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp).ravel()
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValidationError(f"labels must lie in 0..{self.k - 1}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.size

    def __eq__(self, other):
        if not isinstance(other, Assignment):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.k, self.labels.tobytes()))

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def to_matrix(self) -> np.ndarray:
        """Binary ``N x K`` membership matrix with unit row sums."""
        tau = np.zeros((self.labels.size, self.k), dtype=np.int8)
        tau[np.arange(self.labels.size), self.labels] = 1
        return tau

    @classmethod
    def from_matrix(cls, tau) -> "Assignment":
        tau = np.asarray(tau)
        if tau.ndim != 2:
            raise ValidationError("membership matrix must be 2-D")
        if not np.isin(tau, (0, 1)).all() or not (tau.sum(axis=1) == 1).all():
            raise ValidationError("membership rows must be binary with sum 1")
        return cls(np.argmax(tau, axis=1), tau.shape[1])


@dataclass(frozen=True)
class RegressorBlock:
    """Stacked regressors ``x`` (rows ``[1, Y_{t-1}', ..., Y_{t-p}']``) and targets ``y``."""

    x: np.ndarray
    y: np.ndarray
    p: int = field(default=1)


def build_regressors(series, p: int, start: Optional[int] = None) -> RegressorBlock:
    """Build the lagged design for one series.

    Rows run over ``t = start+1 .. T`` (1-based), ``start`` defaulting to
    ``p``.  A larger ``start`` lets clusters of different order share the
    same rows.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim == 1:
        y = y[np.newaxis, :]
    m, t = y.shape
    start = p if start is None else start
    if p < 0 or start < p:
        raise ValidationError(f"need 0 <= p <= start, got p={p}, start={start}")
    if start > t - 2:
        raise OrderTooLarge(f"order {start} too large for series of length {t}")

    rows = t - start
    x = np.empty((rows, 1 + m * p))
    x[:, 0] = 1.0
    for lag in range(1, p + 1):
        x[:, 1 + (lag - 1) * m : 1 + lag * m] = y[:, start - lag : t - lag].T
    return RegressorBlock(x=x, y=y[:, start:].T.copy(), p=p)


def load_dataset(path) -> Dataset:
    """Read a dataset directory (``manifest.json`` + CSV files)."""
    path = Path(path)
    with open(path / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    files = manifest.get("files")
    if not files:
        raise Empty(f"{path / 'manifest.json'} lists no files")

    mats = []
    for name in files:
        rows = np.loadtxt(path / name, delimiter=",", ndmin=2)
        mats.append(rows.T)
    ds = validate_dataset(mats, ids=[Path(f).stem for f in files])

    declared = (manifest.get("N"), manifest.get("m"), manifest.get("T"))
    if declared != (ds.n_series, ds.m, ds.t):
        raise MixedDims(
            f"manifest declares (N, m, T)={declared}, files give {ds.shape}"
        )
    return ds


def save_dataset(dataset: Dataset, path, width: int = 0) -> list:
    """Write ``dataset`` to directory ``path`` and return the file names."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    width = width or len(str(dataset.n_series))
    files = []
    for n in range(dataset.n_series):
        name = f"series_{n + 1:0{width}d}.csv"
        np.savetxt(path / name, dataset.series[n].T, delimiter=",", fmt="%.17g")
        files.append(name)
    manifest = {"m": dataset.m, "T": dataset.t, "N": dataset.n_series, "files": files}
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return files
