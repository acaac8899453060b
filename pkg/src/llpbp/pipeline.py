"""Iterative pseudo-labeling and embedding refinement.

Each iteration builds a kNN graph and an Ising model over the training
covariates, runs sum-product BP, thresholds the marginals, and trains a
fresh network with the aggregate loss. The next iteration uses that
network's hidden-layer embedding as covariates.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import bp
from .bagging import BagStructure, add_label_dp_noise
from .data import DataSplit, LabeledDataset
from .gibbs import IsingModel, build_ising
from .knn import KernelSpec, build_graph, subsample_constraints
from .metrics import auroc
from .mlp import DEFAULT_HIDDEN, MLP, TrainConfig, train
from .pseudo_labels import PseudoLabelSet, threshold

logger = logging.getLogger(__name__)


@dataclass
class StageConfig:
    """Settings for one pseudo-label + training iteration."""

    k: int = 1
    delta_d: float = 1.0
    metric: str = "cosine"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    lambda_b: float = 0.1
    lambda_s: float = 0.1
    T: int = 100
    damping: float = 0.0
    bp_tol: float = 1e-8
    tau: float = 0.5
    label_mode: str = "hard"
    node_term: str = "symmetric"
    hidden: tuple = DEFAULT_HIDDEN
    pooling: str = "mean"
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class PipelineConfig:
    iterations: int = 2
    stage: StageConfig = field(default_factory=StageConfig)
    overrides: dict = field(default_factory=dict)
    knn_fraction: float = 1.0
    dp_epsilon: Optional[float] = None
    dp_delta: float = 1e-5
    dp_round_counts: bool = True
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.knn_fraction <= 1.0:
            raise ValueError("knn_fraction must be in [0, 1]")

    def stage_for(self, r: int) -> StageConfig:
        """Stage settings for iteration ``r`` with its overrides applied.

        Override keys that name :class:`TrainConfig` fields update the nested
        training config.
        """
        over = dict(self.overrides.get(r, {}))
        train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
        tr = {k: over.pop(k) for k in list(over) if k in train_keys}
        st = dataclasses.replace(self.stage, **over)
        if tr:
            st = dataclasses.replace(st, train=dataclasses.replace(st.train, **tr))
        return st


@dataclass
class IterationReport:
    iteration: int
    pseudo_label_auroc: Optional[float]
    val_auroc: float
    test_auroc: Optional[float]
    bp_diagnostics: dict
    wall_times: dict
    num_pairs: int = 0
    best_epoch: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class IterationArtifacts:
    """Per-iteration outputs the CLI writes to disk."""

    marginals: np.ndarray
    pseudo_labels: PseudoLabelSet
    model: MLP
    ising: IsingModel
    train_log: object


class PipelineError(RuntimeError):
    def __init__(self, msg, reports):
        super().__init__(msg)
        self.reports = reports


def pseudo_label_step(z, bags: BagStructure, st: StageConfig, knn_fraction=1.0, seed=0):
    """Graph, Ising model and BP marginals for covariates ``z`` (rows = variables)."""
    graph = build_graph(z, st.k, st.delta_d, st.metric)
    if knn_fraction < 1.0:
        graph = subsample_constraints(graph, knn_fraction, seed)
    model = build_ising(len(z), bags, graph, st.kernel, st.lambda_b, st.lambda_s, st.node_term)
    probs, diag = bp.sum_product(model, st.T, st.damping, st.bp_tol)
    return graph, model, probs, diag


def run(
    ds: LabeledDataset,
    sp: DataSplit,
    bags: BagStructure,
    cfg: PipelineConfig,
    on_iteration: Optional[Callable] = None,
):
    """Run all iterations; returns ``(final model, reports)``.

    ``bags`` index dataset rows and must lie inside ``sp.train``. Validation
    and test rows never enter the graph; they are embedded with the frozen
    model between iterations and scored at the end of each one. The returned
    predictor is the instance head only.
    """
    if ds.labels is None:
        raise ValueError("validation needs instance labels")
    train_idx = np.asarray(sp.train)
    local = bags.remap(train_idx)
    proportions = local.proportions
    if cfg.dp_epsilon is not None:
        # noisy proportions feed the bag head; their counts feed the potentials
        noisy = add_label_dp_noise(local, cfg.dp_epsilon, cfg.dp_delta, cfg.seed + 7919)
        local = local.with_counts(noisy.counts(bags.bag_size, rounded=cfg.dp_round_counts))
        proportions = np.asarray(noisy.proportions, dtype=np.float64)
    y_true_train = ds.labels[train_idx]
    bagged = local.members

    z_all = ds.features
    reports, model = [], None
    for r in range(cfg.iterations):
        st = cfg.stage_for(r)
        try:
            t0 = time.perf_counter()
            z = z_all[train_idx]
            graph = build_graph(z, st.k, st.delta_d, st.metric)
            if cfg.knn_fraction < 1.0:
                graph = subsample_constraints(graph, cfg.knn_fraction, cfg.seed + r)
            ising = build_ising(len(z), local, graph, st.kernel, st.lambda_b, st.lambda_s, st.node_term)
            t1 = time.perf_counter()
            probs, diag = bp.sum_product(ising, st.T, st.damping, st.bp_tol)
            t2 = time.perf_counter()
            pl = threshold(probs, st.tau, st.label_mode)
            targets, weights = pl.targets()
            model = MLP(
                [ds.d, *st.hidden, 1],
                pooling=st.pooling,
                seed=cfg.seed + 1000 * r,
                dtype=cfg.dtype,
            )
            tcfg = dataclasses.replace(st.train, seed=st.train.seed + cfg.seed + 1000 * r)
            model, log = train(
                model,
                ds.features[train_idx],
                local.bags,
                tcfg,
                ds.features[sp.validation],
                ds.labels[sp.validation],
                inst_targets=targets,
                bag_targets=proportions,
                loss_mode="aggregate",
                inst_weights=weights,
            )
            t3 = time.perf_counter()
            z_all = model.embed(ds.features)
            t4 = time.perf_counter()
        except Exception as exc:
            raise PipelineError(f"iteration {r}: {exc}", reports) from exc

        yb = y_true_train[bagged]
        pl_auc = auroc(probs[bagged], yb) if len(np.unique(yb)) == 2 else None
        test_auc = None
        if len(sp.test) and len(np.unique(ds.labels[sp.test])) == 2:
            test_auc = auroc(model.decision_function(ds.features[sp.test]), ds.labels[sp.test])
        rep = IterationReport(
            iteration=r,
            pseudo_label_auroc=pl_auc,
            val_auroc=float(log.best_val_auroc),
            test_auroc=test_auc,
            bp_diagnostics={
                **diag.to_dict(),
                "mooij_value": bp.mooij_contraction_check(ising)[0],
            },
            wall_times={
                "setup": t1 - t0,
                "bp": t2 - t1,
                "train": t3 - t2,
                "embed": t4 - t3,
                "total": time.perf_counter() - t0,
            },
            num_pairs=ising.num_pairs,
            best_epoch=log.best_epoch,
        )
        reports.append(rep)
        logger.info(
            "iteration %d: pseudo-label AUROC %s, val %.4f, test %s",
            r, pl_auc, rep.val_auroc, test_auc,
        )
        if on_iteration is not None:
            on_iteration(r, rep, IterationArtifacts(probs, pl, model, ising, log))
    return model, reports


def run_dllp(ds: LabeledDataset, sp: DataSplit, bags: BagStructure, hidden, cfg: TrainConfig, seed: int = 0, dtype="float64"):
    """Baseline: fit mean instance score per bag to the bag proportion."""
    train_idx = np.asarray(sp.train)
    local = bags.remap(train_idx)
    model = MLP([ds.d, *hidden, 1], seed=seed, dtype=dtype)
    model, log = train(
        model,
        ds.features[train_idx],
        local.bags,
        cfg,
        ds.features[sp.validation],
        ds.labels[sp.validation],
        bag_targets=local.proportions,
        loss_mode="dllp",
    )
    test_auc = auroc(model.decision_function(ds.features[sp.test]), ds.labels[sp.test])
    return model, log, test_auc
