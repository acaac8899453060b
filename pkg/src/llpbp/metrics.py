"""Ranking and neighbor-agreement metrics."""

import numpy as np
from scipy.stats import rankdata

from .knn import NeighborGraph


def auroc(scores, labels) -> float:
    """Normalized Mann-Whitney U: P(score_pos > score_neg) + 0.5 P(tie)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ in shape")
    pos = y == 1
    n1 = int(pos.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUROC needs both classes present")
    ranks = rankdata(s)  # average ranks give ties half credit
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def knn_label_score(graph: NeighborGraph, labels) -> float:
    """Fraction of nodes whose neighbors' majority label matches their own.

    A tied vote earns half credit; nodes without neighbors are skipped.
    """
    y = np.asarray(labels)
    deg = np.diff(graph.indptr)
    src, dst, _ = graph.edges()
    ones = np.bincount(src, weights=y[dst], minlength=graph.m)
    has = deg > 0
    if not has.any():
        raise ValueError("graph has no edges")
    frac = ones[has] / deg[has]
    vote = np.where(frac > 0.5, 1.0, np.where(frac < 0.5, 0.0, 0.5))
    credit = np.where(vote == 0.5, 0.5, (vote == y[has]).astype(float))
    return float(credit.mean())
