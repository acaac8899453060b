"""Datasets, CSV ingestion, splitting and a synthetic two-Gaussian generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed input files or invalid dataset arguments."""


@dataclass(frozen=True)
class LabeledDataset:
    """Covariates ``features`` (m x d) with optional binary ``labels``.

    Labels are only ever used for evaluation and for counting positives when
    bags are formed; the learner never sees them at instance level.
    """

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    columns: Optional[tuple] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-d array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain NaN or Inf")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (x.shape[0],):
                raise DataError(f"labels have shape {y.shape}, expected ({x.shape[0]},)")
            if not np.all((y == 0) | (y == 1)):
                raise DataError("labels must be 0/1")
            y = y.astype(np.int64)
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def standardized(self) -> "LabeledDataset":
        mu = self.features.mean(axis=0)
        sd = self.features.std(axis=0)
        sd[sd == 0] = 1.0
        return LabeledDataset((self.features - mu) / sd, self.labels, self.columns)


@dataclass(frozen=True)
class DataSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        parts = [np.asarray(p, dtype=np.int64) for p in (self.train, self.validation, self.test)]
        joined = np.concatenate(parts)
        if len(np.unique(joined)) != len(joined):
            raise DataError("split index sets overlap")
        if len(joined) and joined.min() < 0:
            raise DataError("negative index in split")
        for name, p in zip(("train", "validation", "test"), parts):
            object.__setattr__(self, name, p)


def load_csv(path, label_column: Optional[str] = None) -> LabeledDataset:
    """Read a numeric CSV with a header row.

    Every column other than ``label_column`` becomes a feature, in file order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column is not None and label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        lab = header.index(label_column) if label_column is not None else None
        rows, labels = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rowno} has {len(row)} fields, expected {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {rowno}, column {col!r}: cannot parse {cell!r}"
                    ) from None
            if lab is not None:
                y = vals.pop(lab)
                if y not in (0.0, 1.0):
                    raise DataError(f"{path}: row {rowno}: label {y!r} is not 0/1")
                labels.append(int(y))
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    columns = tuple(h for i, h in enumerate(header) if i != lab)
    return LabeledDataset(
        np.array(rows, dtype=np.float64),
        np.array(labels, dtype=np.int64) if lab is not None else None,
        columns,
    )


def write_csv(ds: LabeledDataset, path, label_column: str = "y") -> None:
    cols = list(ds.columns) if ds.columns else [f"f{i}" for i in range(ds.d)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + ([label_column] if ds.labels is not None else []))
        for i in range(ds.m):
            row = [repr(float(v)) for v in ds.features[i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            w.writerow(row)


def make_synthetic(m: int, d: int, separation: float, seed: int) -> LabeledDataset:
    """Two isotropic unit Gaussians; class 1 is shifted by ``separation`` on axis 0.

    The first ``m // 2`` rows are class 0; rows are not shuffled.
    """
    if m < 2 or d < 1 or separation < 0:
        raise DataError(f"invalid synthetic parameters m={m}, d={d}, separation={separation}")
    rng = np.random.default_rng(seed)
    n0 = m // 2
    x = rng.standard_normal((m, d))
    y = np.zeros(m, dtype=np.int64)
    y[n0:] = 1
    x[n0:, 0] += separation
    return LabeledDataset(x, y, tuple(f"f{i}" for i in range(d)))


def split(
    ds_or_m, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> DataSplit:
    """Random disjoint train/validation/test partition of ``range(m)``.

    Sizes are ``round(f * m)`` for validation and test; train takes the rest.
    """
    m = ds_or_m.m if isinstance(ds_or_m, LabeledDataset) else int(ds_or_m)
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise DataError(f"fractions must be 3 positive numbers summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(m)
    n_val = int(round(fr[1] * m))
    n_test = int(round(fr[2] * m))
    n_train = m - n_val - n_test
    return DataSplit(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
    )
