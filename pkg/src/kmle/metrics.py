"""Agreement measures between two hard partitions.

Pair-counting measures (Rand index, adjusted Rand index) and
information-theoretic ones (entropy, mutual information, NMI variants,
normalised information distance).  Entropies are in nats.
"""

from __future__ import annotations

import numpy as np
from scipy.special import comb

from .exceptions import LengthMismatch, ValidationError

__all__ = [
    "adjusted_rand_index",
    "ari",
    "ari_contingency",
    "contingency_table",
    "entropy",
    "evaluate",
    "mutual_information",
    "nid",
    "nmi_max",
    "nmi_sqrt",
    "pair_counts",
    "rand_index",
]


def _labels(u):
    if hasattr(u, "labels"):
        u = u.labels
    u = np.asarray(u).ravel()
    if u.ndim != 1:
        raise ValidationError("labels must be one-dimensional")
    return u


def _pair(u, v):
    u, v = _labels(u), _labels(v)
    if u.size != v.size:
        raise LengthMismatch(f"label vectors differ in length: {u.size} vs {v.size}")
    return u, v


def contingency_table(u, v) -> np.ndarray:
    """Counts ``n_ij`` of items in cluster ``i`` of ``u`` and cluster ``j`` of ``v``."""
    u, v = _pair(u, v)
    _, ui = np.unique(u, return_inverse=True)
    _, vi = np.unique(v, return_inverse=True)
    table = np.zeros((ui.max(initial=-1) + 1, vi.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ui, vi), 1)
    return table


def _pairs(counts) -> int:
    counts = np.asarray(counts, dtype=np.int64)
    return int(np.sum(counts * (counts - 1) // 2))


def pair_counts(u, v):
    """Return ``(N00, N01, N10, N11)``.

    ``N11``: pairs together in both; ``N00``: apart in both; ``N01``:
    together in ``u`` only; ``N10``: together in ``v`` only.
    """
    table = contingency_table(u, v)
    n = int(table.sum())
    total = n * (n - 1) // 2
    n11 = _pairs(table)
    same_u = _pairs(table.sum(axis=1))
    same_v = _pairs(table.sum(axis=0))
    n01 = same_u - n11
    n10 = same_v - n11
    n00 = total - n11 - n01 - n10
    return n00, n01, n10, n11


def _same_partition(u, v) -> bool:
    table = contingency_table(u, v)
    return bool(np.all((table > 0).sum(axis=1) == 1) and np.all((table > 0).sum(axis=0) == 1))


def rand_index(u, v) -> float:
    n00, n01, n10, n11 = pair_counts(u, v)
    total = n00 + n01 + n10 + n11
    if total == 0:
        return 1.0
    return (n00 + n11) / total


def ari(u, v) -> float:
    """Adjusted Rand index in pair-count form.

    When the denominator vanishes the value is 1 for identical partitions
    and 0 otherwise.
    """
    n00, n01, n10, n11 = pair_counts(u, v)
    num = 2.0 * (float(n00) * n11 - float(n01) * n10)
    den = float(n00 + n01) * (n01 + n11) + float(n00 + n10) * (n10 + n11)
    if den == 0:
        return 1.0 if _same_partition(u, v) else 0.0
    return num / den


adjusted_rand_index = ari


def ari_contingency(u, v) -> float:
    """Adjusted Rand index from the contingency table (expected-index form)."""
    table = contingency_table(u, v)
    n = table.sum()
    sum_ij = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(n, 2) if n > 1 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0 if _same_partition(u, v) else 0.0
    return float((sum_ij - expected) / (max_index - expected))


def entropy(u) -> float:
    u = _labels(u)
    if u.size == 0:
        return 0.0
    _, counts = np.unique(u, return_counts=True)
    p = counts / u.size
    return float(-np.sum(p * np.log(p)))


def mutual_information(u, v) -> float:
    table = contingency_table(u, v).astype(float)
    n = table.sum()
    if n == 0:
        return 0.0
    a = table.sum(axis=1, keepdims=True)
    b = table.sum(axis=0, keepdims=True)
    nz = table > 0
    ratio = (table * n) / (a * b)
    mi = float(np.sum(table[nz] / n * np.log(ratio[nz])))
    return max(mi, 0.0)


def _normalised(u, v, denom) -> float:
    if denom <= 0:
        return 1.0 if _same_partition(u, v) else 0.0
    return float(min(max(mutual_information(u, v) / denom, 0.0), 1.0))


def nmi_max(u, v) -> float:
    u, v = _pair(u, v)
    return _normalised(u, v, max(entropy(u), entropy(v)))


def nmi_sqrt(u, v) -> float:
    u, v = _pair(u, v)
    return _normalised(u, v, np.sqrt(entropy(u) * entropy(v)))


def nid(u, v) -> float:
    return 1.0 - nmi_max(u, v)


def evaluate(u, v) -> dict:
    """Every measure at once, as written by the ``evaluate`` command."""
    u, v = _pair(u, v)
    return {
        "ri": rand_index(u, v),
        "ari": ari(u, v),
        "nmi_sqrt": nmi_sqrt(u, v),
        "nmi_max": nmi_max(u, v),
        "nid": nid(u, v),
        "n": int(u.size),
        "k_u": int(np.unique(u).size),
        "k_v": int(np.unique(v).size),
    }
