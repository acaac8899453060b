"""Turning marginals into training targets."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .metrics import auroc

MODES = ("hard", "soft", "soft_weighted")


@dataclass(frozen=True)
class PseudoLabelSet:
    hard: np.ndarray
    soft: np.ndarray
    tau: float
    mode: str = "hard"
    weights: Optional[np.ndarray] = None

    def targets(self):
        """(instance targets, instance weights or None) for the trainer."""
        if self.mode == "soft":
            return self.soft, None
        return self.hard.astype(np.float64), self.weights


def threshold(marginals, tau: float, mode: str = "hard") -> PseudoLabelSet:
    """Hard label is 1 iff the marginal strictly exceeds ``tau``.

    ``soft_weighted`` additionally weights each hard label by ``|p - tau|``.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    p = np.asarray(marginals, dtype=np.float64)
    hard = (p > tau).astype(np.int64)
    weights = np.abs(p - tau) if mode == "soft_weighted" else None
    return PseudoLabelSet(hard, p, float(tau), mode, weights)


def pseudo_label_auroc(marginals, true_labels) -> float:
    return auroc(marginals, true_labels)


def write_pseudo_labels(pl: PseudoLabelSet, path, index=None) -> None:
    idx = np.arange(len(pl.hard)) if index is None else np.asarray(index)
    w = pl.weights if pl.weights is not None else np.full(len(pl.hard), np.nan)
    with Path(path).open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["instance_index", "hard", "soft", "weight"])
        for i, hd, s, wt in zip(idx.tolist(), pl.hard.tolist(), pl.soft.tolist(), w.tolist()):
            out.writerow([i, hd, repr(s), "" if np.isnan(wt) else repr(wt)])
