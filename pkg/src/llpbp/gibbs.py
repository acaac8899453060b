"""Ising potentials from bag-count and neighbor-similarity penalties.

The label model over y in {0,1}^m has log-weight

    -lambda_b * sum_S (sum_{j in S} y_j - y(S))^2
    -lambda_s * sum_i sum_{j in N(i)} k(x_i, x_j) (y_i - y_j)^2

which expands (using y^2 = y) into node potentials ``h`` and one pairwise
coefficient ``J`` per unordered pair, plus a configuration-independent
constant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bagging import BagStructure
from .knn import KernelSpec, NeighborGraph, kernel_eval

NODE_TERMS = ("symmetric", "outgoing")


@dataclass(frozen=True)
class IsingModel:
    """Binary pairwise model, log P(y) = h.y + sum_{i<j} J_ij y_i y_j + const.

    ``pairs`` is an (E, 2) array with ``pairs[:, 0] < pairs[:, 1]``, sorted and
    unique. Pairs whose contributions cancel to J = 0 are kept.
    """

    h: np.ndarray
    pairs: np.ndarray
    J: np.ndarray
    lambda_b: float = 0.0
    lambda_s: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        J = np.asarray(self.J, dtype=np.float64)
        if len(J) != len(pairs):
            raise ValueError(f"{len(pairs)} pairs but {len(J)} couplings")
        if len(pairs):
            if np.any(pairs[:, 0] >= pairs[:, 1]):
                raise ValueError("pairs must satisfy i < j")
            if pairs.min() < 0 or pairs.max() >= len(h):
                raise ValueError("pair index out of range")
            keys = pairs[:, 0] * len(h) + pairs[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise ValueError("duplicate pair")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(J))):
            raise ValueError("potentials must be finite")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "J", J)

    @property
    def num_vars(self) -> int:
        return len(self.h)

    @property
    def num_pairs(self) -> int:
        return len(self.J)

    def coupling(self, i: int, j: int) -> float:
        a, b = min(i, j), max(i, j)
        hit = np.nonzero((self.pairs[:, 0] == a) & (self.pairs[:, 1] == b))[0]
        return float(self.J[hit[0]]) if len(hit) else 0.0

    def nonzero_pairs(self) -> np.ndarray:
        return self.pairs[self.J != 0]


def _merge(m, i, j, w):
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    keys = lo * m + hi
    uniq, inv = np.unique(keys, return_inverse=True)
    J = np.bincount(inv, weights=w, minlength=len(uniq))
    return np.stack([uniq // m, uniq % m], axis=1), J


def bag_pairs(bags: BagStructure):
    """All within-bag (i, j) with i < j, as two index arrays."""
    ii, jj = [], []
    for b in bags.bags:
        s = np.sort(b)
        a, c = np.triu_indices(len(s), k=1)
        ii.append(s[a])
        jj.append(s[c])
    if not ii:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(ii), np.concatenate(jj)


def build_ising(
    num_vars: int,
    bags: BagStructure,
    graph: NeighborGraph,
    kernel: KernelSpec,
    lambda_b: float,
    lambda_s: float,
    node_term: str = "symmetric",
) -> IsingModel:
    """Node and pair potentials for ``num_vars`` labels.

    ``node_term="symmetric"`` charges each directed neighbor entry i -> j to
    both endpoints' fields, which is what expanding (y_i - y_j)^2 gives and
    keeps the expansion exact. ``"outgoing"`` charges only the source i, the
    one-sided form of the field; the pair term is identical in both modes.
    """
    if lambda_b < 0 or lambda_s < 0:
        raise ValueError("lambda_b and lambda_s must be >= 0")
    if node_term not in NODE_TERMS:
        raise ValueError(f"node_term must be one of {NODE_TERMS}")
    if graph is not None and graph.m != num_vars:
        raise ValueError(f"graph has {graph.m} rows, model has {num_vars} variables")
    m = num_vars
    members = bags.members
    if len(members) and (members.min() < 0 or members.max() >= m):
        raise ValueError("bag member out of range")
    h = np.zeros(m)
    for b, c in zip(bags.bags, bags.counts):
        h[b] += lambda_b * (2.0 * float(c) - 1.0)

    bi, bj = bag_pairs(bags)
    parts_i, parts_j, parts_w = [bi], [bj], [np.full(len(bi), -2.0 * lambda_b)]
    if graph is not None and graph.num_edges:
        src, dst, dist = graph.edges()
        kv = np.atleast_1d(kernel_eval(kernel, dist))
        np.subtract.at(h, src, lambda_s * kv)
        if node_term == "symmetric":
            np.subtract.at(h, dst, lambda_s * kv)
        # i -> j and j -> i both present: the indicator sum adds twice.
        parts_i.append(src)
        parts_j.append(dst)
        parts_w.append(2.0 * lambda_s * kv)
    pairs, J = _merge(
        m, np.concatenate(parts_i), np.concatenate(parts_j), np.concatenate(parts_w)
    )
    return IsingModel(h, pairs, J, float(lambda_b), float(lambda_s))


def energy(model: IsingModel, y) -> float:
    """h.y + sum_{i<j} J_ij y_i y_j, the unnormalized log-probability."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (model.num_vars,):
        raise ValueError(f"configuration has shape {y.shape}, expected ({model.num_vars},)")
    p = model.pairs
    return float(model.h @ y + np.sum(model.J * y[p[:, 0]] * y[p[:, 1]]))


def energies(model: IsingModel, ys: np.ndarray) -> np.ndarray:
    """Vectorized :func:`energy` over the rows of ``ys``."""
    ys = np.asarray(ys, dtype=np.float64)
    p = model.pairs
    return ys @ model.h + (ys[:, p[:, 0]] * ys[:, p[:, 1]]) @ model.J


def penalty_energy(num_vars, bags: BagStructure, graph, kernel, lambda_b, lambda_s, y) -> float:
    """The squared-penalty log-weight before expansion into h and J."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (num_vars,):
        raise ValueError(f"configuration has shape {y.shape}, expected ({num_vars},)")
    e = 0.0
    for b, c in zip(bags.bags, bags.counts):
        e -= lambda_b * (y[b].sum() - float(c)) ** 2
    if graph is not None and graph.num_edges:
        src, dst, dist = graph.edges()
        kv = np.atleast_1d(kernel_eval(kernel, dist))
        e -= lambda_s * float(np.sum(kv * (y[src] - y[dst]) ** 2))
    return float(e)


def spin_penalty_energy(num_vars, bags, graph, kernel, lambda_b, lambda_s, s) -> float:
    """Same penalties written for spins s = 2y - 1 in {-1, +1}.

    Bag targets become 2 y(S) - |S|. With the weights divided by 4 this
    equals :func:`penalty_energy` at y = (s + 1) / 2.
    """
    s = np.asarray(s, dtype=np.float64)
    e = 0.0
    for b, c in zip(bags.bags, bags.counts):
        e -= lambda_b * (s[b].sum() - (2.0 * float(c) - len(b))) ** 2
    if graph is not None and graph.num_edges:
        src, dst, dist = graph.edges()
        kv = np.atleast_1d(kernel_eval(kernel, dist))
        e -= lambda_s * float(np.sum(kv * (s[src] - s[dst]) ** 2))
    return float(e)


def expected_pair_count(num_vars: int, bags: BagStructure, graph: NeighborGraph) -> int:
    """|kNN pairs| + sum_S |S|(|S|-1)/2 - |pairs that are both|."""
    knn = graph.undirected_pairs() if graph is not None else np.zeros((0, 2), dtype=np.int64)
    bag_id = bags.bag_of(num_vars)
    both = int(np.sum((bag_id[knn[:, 0]] >= 0) & (bag_id[knn[:, 0]] == bag_id[knn[:, 1]])))
    within = sum(len(b) * (len(b) - 1) // 2 for b in bags.bags)
    return len(knn) + within - both


def write_model(model: IsingModel, nodes_path, pairs_path) -> None:
    with Path(nodes_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_index", "h"])
        for i, v in enumerate(model.h.tolist()):
            w.writerow([i, repr(v)])
    with Path(pairs_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "J"])
        for (i, j), v in zip(model.pairs.tolist(), model.J.tolist()):
            w.writerow([i, j, repr(v)])


def read_model(nodes_path, pairs_path) -> IsingModel:
    with Path(nodes_path).open(newline="") as fh:
        rows = sorted((int(r["instance_index"]), float(r["h"])) for r in csv.DictReader(fh))
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ValueError(f"{nodes_path}: instance indices must be 0..m-1")
    h = np.array([v for _, v in rows])
    with Path(pairs_path).open(newline="") as fh:
        prs = [(int(r["i"]), int(r["j"]), float(r["J"])) for r in csv.DictReader(fh)]
    if not prs:
        return IsingModel(h, np.zeros((0, 2), dtype=np.int64), np.zeros(0))
    i = np.array([p[0] for p in prs])
    j = np.array([p[1] for p in prs])
    if np.any(i == j):
        raise ValueError(f"{pairs_path}: self pair")
    pairs, J = _merge(len(h), i, j, np.array([p[2] for p in prs]))
    return IsingModel(h, pairs, J)
