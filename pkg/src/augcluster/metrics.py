"""Clustering agreement scores: NMI and Rand index (float64 throughout)."""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, InputError


def contingency(y, c):
    """Contingency table between two labelings with arbitrary label ids."""
    y = np.asarray(y)
    c = np.asarray(c)
    if y.ndim != 1 or c.ndim != 1 or len(y) != len(c):
        raise InputError(f"label vectors must be 1-D and equal length, got {y.shape} and {c.shape}")
    _, yi = np.unique(y, return_inverse=True)
    _, ci = np.unique(c, return_inverse=True)
    table = np.zeros((yi.max(initial=-1) + 1, ci.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (yi, ci), 1)
    return table


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(y, c, normalizer="arithmetic"):
    """Normalized mutual information with natural-log entropies.

    ``normalizer`` picks how the two entropies are combined:
    ``"arithmetic"`` (default), ``"geometric"``, ``"min"`` or ``"max"``.
    Two single-cluster labelings score 1; exactly one single-cluster
    labeling scores 0.
    """
    table = contingency(y, c)
    n = int(table.sum())
    if n < 1:
        raise InputError("nmi: need at least one sample")
    hy = _entropy(table.sum(axis=1), n)
    hc = _entropy(table.sum(axis=0), n)
    if hy == 0 and hc == 0:
        return 1.0
    if hy == 0 or hc == 0:
        return 0.0
    nz = table > 0
    pij = table[nz] / n
    pi = table.sum(axis=1, keepdims=True)
    pj = table.sum(axis=0, keepdims=True)
    outer = (pi * pj)[nz] / float(n) ** 2
    mi = float((pij * np.log(pij / outer)).sum())
    if normalizer == "arithmetic":
        denom = (hy + hc) / 2
    elif normalizer == "geometric":
        denom = np.sqrt(hy * hc)
    elif normalizer == "min":
        denom = min(hy, hc)
    elif normalizer == "max":
        denom = max(hy, hc)
    else:
        raise ConfigurationError(f"unknown NMI normalizer {normalizer!r}")
    return float(np.clip(mi / denom, 0.0, 1.0))


def _pairs(x):
    x = np.asarray(x, dtype=np.int64)
    return int((x * (x - 1) // 2).sum())


def rand_index(y, c):
    """Fraction of point pairs on which the two labelings agree."""
    table = contingency(y, c)
    n = int(table.sum())
    if n < 2:
        raise InputError(f"rand_index: need at least 2 samples, got {n}")
    total = n * (n - 1) // 2
    together_both = _pairs(table)
    together_y = _pairs(table.sum(axis=1))
    together_c = _pairs(table.sum(axis=0))
    apart_both = total - together_y - together_c + together_both
    return (together_both + apart_both) / total
