"""Random disjoint bags, bag counts and Gaussian-mechanism label noise."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np


class BagError(ValueError):
    pass


@dataclass(frozen=True)
class BagStructure:
    """Disjoint bags over instance indices with their positive counts.

    ``counts`` is normally integer; it may be real when noisy proportions are
    fed through unrounded (``proportions * B``).
    """

    bags: tuple
    counts: np.ndarray
    bag_size: int

    def __post_init__(self):
        bags = tuple(np.asarray(b, dtype=np.int64) for b in self.bags)
        counts = np.asarray(self.counts)
        if len(bags) != len(counts):
            raise BagError(f"{len(bags)} bags but {len(counts)} counts")
        flat = np.concatenate(bags) if bags else np.zeros(0, dtype=np.int64)
        if len(np.unique(flat)) != len(flat):
            raise BagError("bags overlap; only disjoint bags are supported")
        sizes = np.array([len(b) for b in bags])
        if np.any(counts < 0) or np.any(counts > sizes):
            raise BagError("bag counts must lie in [0, |S|]")
        object.__setattr__(self, "bags", bags)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return len(self.bags)

    @property
    def members(self) -> np.ndarray:
        return np.concatenate(self.bags) if self.bags else np.zeros(0, dtype=np.int64)

    @property
    def proportions(self) -> np.ndarray:
        return np.array([c / len(b) for b, c in zip(self.bags, self.counts)], dtype=np.float64)

    def bag_of(self, m: int) -> np.ndarray:
        """Array of length ``m`` holding each index's bag id, -1 if unbagged."""
        out = np.full(m, -1, dtype=np.int64)
        for b, idx in enumerate(self.bags):
            out[idx] = b
        return out

    def remap(self, positions: np.ndarray) -> "BagStructure":
        """Re-express bag members as positions within ``positions``.

        Used to move from dataset-wide indices to rows of a train-only matrix.
        """
        lookup = {int(g): i for i, g in enumerate(positions)}
        try:
            bags = tuple(np.array([lookup[int(g)] for g in b], dtype=np.int64) for b in self.bags)
        except KeyError as e:
            raise BagError(f"bag member {e.args[0]} not among the given positions") from None
        return BagStructure(bags, self.counts, self.bag_size)

    def with_counts(self, counts) -> "BagStructure":
        return BagStructure(self.bags, np.asarray(counts), self.bag_size)


@dataclass(frozen=True)
class NoisyBagLabels:
    proportions: np.ndarray
    epsilon: float
    delta: float
    tau_noise: float

    def counts(self, bag_size: int, rounded: bool = True) -> np.ndarray:
        c = self.proportions * bag_size
        return np.rint(c).astype(np.int64) if rounded else c


def generate_bags(train_indices, bag_size: int, labels, seed: int) -> BagStructure:
    """Sample ``len(train_indices) // bag_size`` bags without replacement.

    Leftover instances (fewer than one bag) stay unbagged.
    """
    idx = np.asarray(train_indices, dtype=np.int64)
    if bag_size < 2:
        raise BagError(f"bag size must be >= 2, got {bag_size}")
    if len(idx) < bag_size:
        raise BagError(f"bag size {bag_size} exceeds the {len(idx)} training instances")
    labels = np.asarray(labels)
    perm = np.random.default_rng(seed).permutation(idx)
    n = len(idx) // bag_size
    bags = tuple(np.sort(perm[i * bag_size : (i + 1) * bag_size]) for i in range(n))
    counts = np.array([int(labels[b].sum()) for b in bags], dtype=np.int64)
    return BagStructure(bags, counts, bag_size)


def gaussian_noise_scale(bag_size: int, epsilon: float, delta: float) -> float:
    """Std of the Gaussian mechanism on a bag proportion (sensitivity 1/B)."""
    if not epsilon > 0:
        raise BagError(f"epsilon must be > 0, got {epsilon}")
    if not 0 < delta < 1:
        raise BagError(f"delta must be in (0, 1), got {delta}")
    return (1.0 / bag_size) * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def add_label_dp_noise(bs: BagStructure, epsilon: float, delta: float, seed: int) -> NoisyBagLabels:
    tau = gaussian_noise_scale(bs.bag_size, epsilon, delta)
    rng = np.random.default_rng(seed)
    noisy = bs.proportions + rng.normal(0.0, tau, size=bs.n)
    return NoisyBagLabels(np.clip(noisy, 0.0, 1.0), float(epsilon), float(delta), tau)


def write_bags(bs: BagStructure, bags_path, counts_path) -> None:
    with Path(bags_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_index", "bag_id"])
        for b, idx in enumerate(bs.bags):
            for i in idx:
                w.writerow([int(i), b])
    with Path(counts_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bag_id", "count"])
        for b, c in enumerate(bs.counts):
            w.writerow([b, int(c) if float(c).is_integer() else repr(float(c))])


def read_bags(bags_path, counts_path, bag_size: Optional[int] = None) -> BagStructure:
    members: dict[int, list] = {}
    with Path(bags_path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            members.setdefault(int(row["bag_id"]), []).append(int(row["instance_index"]))
    counts: dict[int, float] = {}
    with Path(counts_path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            counts[int(row["bag_id"])] = float(row["count"])
    if set(members) != set(counts):
        raise BagError("bag ids in the bag file and the counts file differ")
    ids = sorted(members)
    c = np.array([counts[b] for b in ids])
    if np.all(c == np.rint(c)):
        c = c.astype(np.int64)
    if bag_size is None:
        bag_size = max(len(members[b]) for b in ids)
    return BagStructure(tuple(np.sort(members[b]) for b in ids), c, bag_size)
