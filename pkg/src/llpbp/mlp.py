"""Dense ReLU network with an instance head and a pooled bag head.

Weights are stored as ``(fan_out, fan_in)`` matrices. The instance head is a
sigmoid on the last affine layer. The bag head pools the activations of
hidden layer ``L - 2`` over a bag, then applies ReLU(V1 . + c1) and
sigmoid(V2 . + c2). Everything is plain numpy with hand-written backprop.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .metrics import auroc

logger = logging.getLogger(__name__)

POOLINGS = ("mean", "sum", "max")
DEFAULT_HIDDEN = (5040, 1280, 320, 128, 64)
EPS = 1e-12


class TrainingError(RuntimeError):
    pass


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _ce_logit(z, t):
    """Binary cross-entropy of sigmoid(z) against target t, from the logit."""
    return np.logaddexp(0.0, z) - t * z


def _ce_prob(p, t):
    p = np.clip(p, EPS, 1.0 - EPS)
    return -(t * np.log(p) + (1.0 - t) * np.log1p(-p))


class MLP:
    """Instance network f_L plus bag head g_L.

    ``layer_dims`` is ``[d, d_1, ..., d_{L-1}, 1]``. The pooled tap and the
    default embedding tap are both the output of hidden layer ``L - 2``
    (the input itself when the net is too shallow to have one).
    """

    def __init__(
        self,
        layer_dims: Sequence[int],
        pool_hidden: Optional[int] = None,
        pooling: str = "mean",
        embed_layer: Optional[int] = None,
        seed: int = 0,
        dtype=np.float64,
    ):
        dims = [int(v) for v in layer_dims]
        if len(dims) < 2 or dims[-1] != 1 or min(dims) < 1:
            raise ValueError(f"layer_dims must look like [d, ..., 1], got {dims}")
        if pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        self.layer_dims = dims
        self.L = len(dims) - 1
        self.pool_layer = max(self.L - 2, 0)
        self.embed_layer = self.pool_layer if embed_layer is None else int(embed_layer)
        if not 0 <= self.embed_layer < self.L:
            raise ValueError(f"embed_layer must be in [0, {self.L})")
        self.pool_dim = dims[self.pool_layer]
        self.pool_hidden = int(pool_hidden) if pool_hidden is not None else dims[min(self.L - 1, self.pool_layer + 1)]
        self.pooling = pooling
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        def he(fan_out, fan_in):
            lim = math.sqrt(6.0 / fan_in)
            return rng.uniform(-lim, lim, size=(fan_out, fan_in)).astype(self.dtype)

        self.params: dict[str, np.ndarray] = {}
        for ell in range(self.L):
            self.params[f"W{ell}"] = he(dims[ell + 1], dims[ell])
            self.params[f"b{ell}"] = np.zeros(dims[ell + 1], dtype=self.dtype)
        self.params["V1"] = he(self.pool_hidden, self.pool_dim)
        self.params["c1"] = np.zeros(self.pool_hidden, dtype=self.dtype)
        self.params["V2"] = he(1, self.pool_hidden)
        self.params["c2"] = np.zeros(1, dtype=self.dtype)

    # ------------------------------------------------------------------ forward

    def _check(self, X):
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.layer_dims[0]:
            raise ValueError(f"input has dimension {X.shape[1]}, model expects {self.layer_dims[0]}")
        return X

    def _forward(self, X):
        """Activations a_0..a_{L-1} and the output logits."""
        acts = [X]
        a = X
        for ell in range(self.L - 1):
            a = np.maximum(a @ self.params[f"W{ell}"].T + self.params[f"b{ell}"], 0.0)
            acts.append(a)
        z = (a @ self.params[f"W{self.L - 1}"].T + self.params[f"b{self.L - 1}"])[:, 0]
        return acts, z

    def decision_function(self, X) -> np.ndarray:
        """Instance-head logits as float64.

        Ranks the same as :meth:`predict` but never ties through sigmoid
        saturation, so AUROC is computed from these.
        """
        X = self._check(X)
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], 8192):
            out[s : s + 8192] = self._forward(X[s : s + 8192])[1]
        return out

    def predict(self, X) -> np.ndarray:
        """Instance scores f_L(x) in (0, 1); the bag head is not used."""
        return sigmoid(self.decision_function(X))

    def embed(self, X, layer: Optional[int] = None) -> np.ndarray:
        layer = self.embed_layer if layer is None else layer
        X = self._check(X)
        chunks = [self._forward(X[s : s + 8192])[0][layer] for s in range(0, X.shape[0], 8192)]
        return np.concatenate(chunks).astype(np.float64)

    def forward_instance(self, x):
        """(score, embedding) for a single input vector."""
        X = self._check(x)
        acts, z = self._forward(X)
        return float(sigmoid(z[0])), acts[self.embed_layer][0].astype(np.float64)

    def _pool(self, H):
        if self.pooling == "mean":
            return H.mean(axis=0)
        if self.pooling == "sum":
            return H.sum(axis=0)
        return H.max(axis=0)

    def _bag_logit(self, pooled):
        u = np.maximum(self.params["V1"] @ pooled + self.params["c1"], 0.0)
        return float(self.params["V2"][0] @ u + self.params["c2"][0]), u

    def forward_bag(self, bag_inputs) -> float:
        X = self._check(bag_inputs)
        if X.shape[0] == 0:
            raise ValueError("empty bag")
        acts, _ = self._forward(X)
        return float(sigmoid(self._bag_logit(self._pool(acts[self.pool_layer]))[0]))

    # ----------------------------------------------------------------- backward

    def loss_and_grads(
        self,
        X,
        groups,
        inst_targets=None,
        bag_targets=None,
        lambda_a: float = 0.0,
        mode: str = "aggregate",
        inst_weights=None,
        scale: float = 1.0,
    ):
        """Summed loss over ``groups`` (row-index arrays into ``X``) and gradients.

        ``mode``:
          * ``aggregate``: sum_i w_i CE(f(x_i), t_i) + lambda_a CE(g(S), p_S)
          * ``instance``: sum_i w_i CE(f(x_i), t_i) (plain supervised)
          * ``dllp``: CE(mean_i f(x_i), p_S)

        The loss and every gradient are multiplied by ``scale``.
        """
        if mode not in ("aggregate", "instance", "dllp"):
            raise ValueError(f"unknown loss mode {mode!r}")
        X = np.asarray(X, dtype=self.dtype)
        groups = [np.asarray(g, dtype=np.int64) for g in groups]
        if any(len(g) == 0 for g in groups):
            raise ValueError("empty bag")
        rows = np.concatenate(groups)
        sizes = np.array([len(g) for g in groups])
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        acts, z = self._forward(X[rows])
        f = sigmoid(z)
        n = len(rows)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        dz = np.zeros(n)
        dA_pool = None
        loss = 0.0

        if mode in ("aggregate", "instance"):
            t = np.asarray(inst_targets, dtype=np.float64)[rows]
            w = np.ones(n) if inst_weights is None else np.asarray(inst_weights, dtype=np.float64)[rows]
            loss += float(np.sum(w * _ce_logit(z, t)))
            dz += w * (f - t)

        if mode == "dllp":
            p = np.asarray(bag_targets, dtype=np.float64)
            for b, (s0, sz) in enumerate(zip(starts, sizes)):
                fb = f[s0 : s0 + sz]
                mb = fb.mean()
                loss += float(_ce_prob(mb, p[b]))
                if EPS < mb < 1.0 - EPS:
                    dm = -p[b] / mb + (1.0 - p[b]) / (1.0 - mb)
                    dz[s0 : s0 + sz] += dm / sz * fb * (1.0 - fb)

        if mode == "aggregate" and lambda_a != 0.0:
            p = np.asarray(bag_targets, dtype=np.float64)
            H = acts[self.pool_layer]
            dA_pool = np.zeros_like(H)
            V1, V2 = self.params["V1"], self.params["V2"]
            for b, (s0, sz) in enumerate(zip(starts, sizes)):
                Hb = H[s0 : s0 + sz]
                pooled = self._pool(Hb)
                gz, u = self._bag_logit(pooled)
                loss += lambda_a * float(_ce_logit(gz, p[b]))
                dg = lambda_a * (sigmoid(gz) - p[b])
                grads["V2"][0] += dg * u
                grads["c2"][0] += dg
                du = dg * V2[0] * (u > 0)
                grads["V1"] += np.outer(du, pooled)
                grads["c1"] += du
                dpooled = V1.T @ du
                if self.pooling == "mean":
                    dA_pool[s0 : s0 + sz] += dpooled / sz
                elif self.pooling == "sum":
                    dA_pool[s0 : s0 + sz] += dpooled
                else:
                    arg = np.argmax(Hb, axis=0)
                    dA_pool[s0 + arg, np.arange(Hb.shape[1])] += dpooled

        # backprop through the instance network
        delta = dz[:, None]
        for ell in range(self.L - 1, -1, -1):
            a_in = acts[ell]
            grads[f"W{ell}"] += delta.T @ a_in
            grads[f"b{ell}"] += delta.sum(axis=0)
            if ell == 0:
                break
            dA = delta @ self.params[f"W{ell}"]
            if dA_pool is not None and ell == self.pool_layer:
                dA = dA + dA_pool
            delta = dA * (acts[ell] > 0)
        if scale != 1.0:
            loss *= scale
            for k in grads:
                grads[k] *= scale
        return loss, grads

    # ------------------------------------------------------------ serialization

    def to_dict(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "pool_hidden": self.pool_hidden,
            "pooling": self.pooling,
            "embed_layer": self.embed_layer,
            "dtype": self.dtype.name,
            "params": {
                k: {"shape": list(v.shape), "data": v.astype(np.float64).ravel().tolist()}
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        model = cls(d["layer_dims"], d["pool_hidden"], d["pooling"], d["embed_layer"], dtype=d.get("dtype", "float64"))
        for k, v in d["params"].items():
            model.params[k] = np.array(v["data"], dtype=model.dtype).reshape(v["shape"])
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MLP":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}


# ---------------------------------------------------------------- single bags


def aggregate_loss(model: MLP, bag_inputs, hard_labels, bag_count, lambda_a: float) -> float:
    X = np.asarray(bag_inputs, dtype=np.float64)
    y = np.asarray(hard_labels, dtype=np.float64)
    if len(y) != len(X):
        raise ValueError("labels length must equal bag size")
    loss, _ = model.loss_and_grads(X, [np.arange(len(X))], y, [bag_count / len(X)], lambda_a, "aggregate")
    return loss


def dllp_loss(model: MLP, bag_inputs, bag_count) -> float:
    X = np.asarray(bag_inputs, dtype=np.float64)
    loss, _ = model.loss_and_grads(X, [np.arange(len(X))], bag_targets=[bag_count / len(X)], mode="dllp")
    return loss


# -------------------------------------------------------------------- training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    lambda_a: float = 1.0
    batch_size: int = 512  # instances; rounded to whole bags
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.lambda_a < 0:
            raise ValueError("lambda_a must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, params: dict, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if self.wd:
                update = update + self.wd * p
            p -= (self.lr * update).astype(p.dtype)


class EarlyStopping:
    """Stop after ``patience`` epochs without a strict improvement."""

    def __init__(self, patience: int = 20):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value`` for ``epoch``; True means stop now."""
        if value > self.best:
            self.best, self.best_epoch, self.wait = value, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainLog:
    epochs: list
    best_epoch: int
    best_val_auroc: float
    stopped_epoch: int

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_auroc"])
            for e in self.epochs:
                w.writerow([e["epoch"], repr(e["train_loss"]), repr(e["val_auroc"])])

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(groups, bags_per_batch, rng):
    order = rng.permutation(len(groups))
    return [order[s : s + bags_per_batch] for s in range(0, len(order), bags_per_batch)]


def train(
    model: MLP,
    X,
    groups,
    cfg: TrainConfig,
    X_val,
    y_val,
    inst_targets=None,
    bag_targets=None,
    loss_mode: str = "aggregate",
    inst_weights=None,
):
    """Fit ``model`` in place; returns ``(model, TrainLog)``.

    ``groups`` are the training bags as row-index arrays into ``X``; every
    mini-batch is a set of whole bags holding about ``cfg.batch_size``
    instances. Batch loss is the summed loss divided by the instances in the
    batch. After each epoch the validation AUROC of f_L decides early
    stopping, and the parameters of the best epoch are restored at the end.
    """
    groups = [np.asarray(g, dtype=np.int64) for g in groups]
    if not groups:
        raise TrainingError("no training bags")
    y_val = np.asarray(y_val)
    if len(np.unique(y_val)) < 2:
        raise TrainingError("validation labels contain a single class")
    if loss_mode not in ("aggregate", "instance", "dllp"):
        raise ValueError(f"unknown loss mode {loss_mode!r}")
    X = np.asarray(X, dtype=model.dtype)
    X_val = np.asarray(X_val, dtype=model.dtype)
    bag_targets = None if bag_targets is None else np.asarray(bag_targets, dtype=np.float64)
    avg = max(1.0, float(np.mean([len(g) for g in groups])))
    bags_per_batch = max(1, int(round(cfg.batch_size / avg)))
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps)
    stopper = EarlyStopping(cfg.patience)
    best = model.copy_params()
    history = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        total, count = 0.0, 0
        for bi, batch in enumerate(_batches(groups, bags_per_batch, rng)):
            gs = [groups[b] for b in batch]
            n_inst = sum(len(g) for g in gs)
            loss, grads = model.loss_and_grads(
                X,
                gs,
                inst_targets,
                None if bag_targets is None else bag_targets[batch],
                cfg.lambda_a,
                loss_mode,
                inst_weights,
                scale=1.0 / n_inst,
            )
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            opt.step(model.params, grads)
            total += loss * n_inst
            count += n_inst
        val = auroc(model.decision_function(X_val), y_val)
        history.append({"epoch": epoch, "train_loss": total / count, "val_auroc": val})
        logger.debug("epoch %d loss %.5f val_auroc %.5f", epoch, total / count, val)
        improved_before = stopper.best_epoch
        stop = stopper.update(epoch, val)
        if stopper.best_epoch != improved_before:
            best = model.copy_params()
        if stop:
            break
    model.params = best
    return model, TrainLog(history, stopper.best_epoch, stopper.best, epoch)


def train_supervised(model: MLP, X, y, cfg: TrainConfig, X_val, y_val, groups=None):
    """Plain instance-label training; ``groups`` fixes the batching units."""
    y = np.asarray(y, dtype=np.float64)
    if groups is None:
        step = max(1, cfg.batch_size)
        groups = [np.arange(s, min(s + step, len(y))) for s in range(0, len(y), step)]
        cfg = TrainConfig(**{**asdict(cfg), "batch_size": step})
    return train(model, X, groups, cfg, X_val, y_val, inst_targets=y, loss_mode="instance")
