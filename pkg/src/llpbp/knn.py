"""Distances, similarity kernels and exact thresholded kNN graphs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

METRICS = ("cosine", "euclidean")

# Upper bound on the number of distances held per block.
_BLOCK_CELLS = 4_000_000


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "matern"
    gamma: float = 1.0
    nu: float = 1.5
    length_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rbf", "matern"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ValueError("rbf gamma must be > 0")
        if self.kind == "matern":
            if self.nu not in (0.5, 1.5, 2.5):
                raise ValueError(f"matern nu must be one of 0.5, 1.5, 2.5; got {self.nu}")
            if not self.length_scale > 0:
                raise ValueError("matern length scale must be > 0")

    def __call__(self, dist):
        return kernel_eval(self, dist)


def distance(a, b, metric: str = "euclidean") -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    if metric == "euclidean":
        return float(np.sqrt(np.sum((a - b) ** 2)))
    if metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            raise ValueError("cosine distance is undefined for a zero vector")
        return float(min(max(1.0 - np.dot(a, b) / (na * nb), 0.0), 2.0))
    raise ValueError(f"unknown metric {metric!r}")


def kernel_eval(spec: KernelSpec, dist):
    d = np.asarray(dist, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    if spec.kind == "rbf":
        out = np.exp(-spec.gamma * d**2)
    else:
        r = d / spec.length_scale
        if spec.nu == 0.5:
            out = np.exp(-r)
        elif spec.nu == 1.5:
            s = math.sqrt(3.0) * r
            out = (1.0 + s) * np.exp(-s)
        else:
            s = math.sqrt(5.0) * r
            out = (1.0 + s + s * s / 3.0) * np.exp(-s)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class NeighborGraph:
    """Directed neighbor lists in CSR form.

    Row ``i`` holds ``indices[indptr[i]:indptr[i+1]]``, nearest first.
    """

    indptr: np.ndarray
    indices: np.ndarray
    distances: np.ndarray
    k: int
    delta_d: float

    @property
    def m(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        return len(self.indices)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edges(self):
        """(src, dst, distance) arrays of all directed entries."""
        src = np.repeat(np.arange(self.m), np.diff(self.indptr))
        return src, self.indices, self.distances

    def undirected_pairs(self) -> np.ndarray:
        src, dst, _ = self.edges()
        pairs = np.stack([np.minimum(src, dst), np.maximum(src, dst)], axis=1)
        return np.unique(pairs, axis=0) if len(pairs) else pairs.reshape(0, 2)


def _pairwise(q, x, metric):
    d = cdist(q, x, metric=metric)
    if metric == "cosine":
        np.clip(d, 0.0, 2.0, out=d)
    return d


def build_graph(features, k: int, delta_d: float = math.inf, metric: str = "euclidean") -> NeighborGraph:
    """Exact k nearest neighbors of every row, kept only if within ``delta_d``.

    Ties are broken toward the lower index. Distances come from ``cdist``,
    which is exactly symmetric, so tie-breaking is consistent in both
    directions of a pair.
    """
    x = np.asarray(features, dtype=np.float64)
    m = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if not delta_d > 0:
        raise ValueError("delta_d must be > 0")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if metric == "cosine" and np.any(np.linalg.norm(x, axis=1) == 0):
        raise ValueError("cosine distance is undefined for a zero vector")
    kk = min(k, m - 1)
    rows, cols, dists = [], [], []
    block = max(1, _BLOCK_CELLS // max(m, 1))
    for start in range(0, m, block):
        stop = min(m, start + block)
        d = _pairwise(x[start:stop], x, metric)
        r = np.arange(stop - start)
        d[r, start + r] = np.inf
        if kk == 0:
            continue
        kth = np.partition(d, kk - 1, axis=1)[:, kk - 1]
        cr, cc = np.nonzero(d <= kth[:, None])
        cd = d[cr, cc]
        # nonzero() yields column-ascending order within a row; a stable sort
        # on (row, distance) keeps lowest-index-first among ties.
        order = np.lexsort((cc, cd, cr))
        cr, cc, cd = cr[order], cc[order], cd[order]
        first = np.searchsorted(cr, r)
        rank = np.arange(len(cr)) - first[cr]
        keep = (rank < kk) & (cd <= delta_d)
        rows.append(cr[keep] + start)
        cols.append(cc[keep])
        dists.append(cd[keep])
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    dists = np.concatenate(dists) if dists else np.zeros(0)
    indptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=m), out=indptr[1:])
    return NeighborGraph(indptr, cols.astype(np.int64), dists, k, float(delta_d))


def subsample_constraints(g: NeighborGraph, fraction: float, seed: int) -> NeighborGraph:
    """Keep each directed neighbor entry independently with probability ``fraction``."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    if fraction == 1.0:
        return g
    keep = np.random.default_rng(seed).random(g.num_edges) < fraction
    src, dst, dist = g.edges()
    indptr = np.zeros(g.m + 1, dtype=np.int64)
    np.cumsum(np.bincount(src[keep], minlength=g.m), out=indptr[1:])
    return NeighborGraph(indptr, dst[keep], dist[keep], g.k, g.delta_d)


def write_graph(g: NeighborGraph, kernel: KernelSpec, path) -> None:
    src, dst, dist = g.edges()
    kv = kernel_eval(kernel, dist)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src_index", "dst_index", "distance", "kernel_value"])
        for row in zip(src.tolist(), dst.tolist(), dist.tolist(), np.atleast_1d(kv).tolist()):
            w.writerow(row)
