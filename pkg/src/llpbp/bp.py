"""Sum-product / max-product belief propagation on binary pairwise models.

Messages live on directed edges j -> i. Each is a normalized pair
(m(0), m(1)), stored as its log-ratio. Updates use a flooding schedule:
every round-t message is computed from round t-1 messages only.

Each node's own field h_i enters its outgoing messages and its belief once,
so marginals are exact on forests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gibbs import IsingModel


@dataclass
class BpDiagnostics:
    rounds_run: int = 0
    max_message_delta: list = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "rounds_run": self.rounds_run,
            "max_message_delta": [float(d) for d in self.max_message_delta],
            "converged": self.converged,
        }


class _EdgeIndex:
    """Directed-edge bookkeeping shared by both BP variants."""

    def __init__(self, model: IsingModel):
        p = model.pairs
        # directed edge e carries a message src[e] -> dst[e]
        self.src = np.concatenate([p[:, 0], p[:, 1]])
        self.dst = np.concatenate([p[:, 1], p[:, 0]])
        self.J = np.concatenate([model.J, model.J])
        E = len(p)
        self.rev = np.concatenate([np.arange(E, 2 * E), np.arange(E)])
        self.m = model.num_vars

    def incoming_sum(self, values):
        """Sum of edge values grouped by destination node."""
        return np.bincount(self.dst, weights=values, minlength=self.m)


def log_messages(ratio):
    """Two-entry normalized log-messages (log m(0), log m(1)) from log-ratios."""
    r = np.asarray(ratio, dtype=np.float64)
    return -np.logaddexp(0.0, r), -np.logaddexp(0.0, -r)


def _run(model: IsingModel, T: int, damping: float, tol: float, max_product: bool):
    """Flooding-schedule BP; returns final log-odds beliefs and diagnostics.

    A normalized binary message is fully described by its log-ratio
    r = log m(1) - log m(0), which is what gets stored per directed edge.
    Damping mixes log-messages; after renormalization that is the same
    convex mix of log-ratios.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must be in [0, 1)")
    g = _EdgeIndex(model)
    h = model.h
    n_dir = len(g.src)
    r = np.zeros(n_dir)
    diag = BpDiagnostics()
    if n_dir == 0:
        diag.rounds_run = 1
        diag.max_message_delta.append(0.0)
        diag.converged = True
        return h.copy(), diag
    p_old = np.full(n_dir, 0.5)
    for _ in range(T):
        belief = h + g.incoming_sum(r)
        # cavity log-odds of the sender, excluding what the receiver sent it
        c = belief[g.src] - r[g.rev]
        if max_product:
            new = np.maximum(c + g.J, 0.0) - np.maximum(c, 0.0)
        else:
            new = np.logaddexp(0.0, c + g.J) - np.logaddexp(0.0, c)
        if damping > 0:
            new = (1.0 - damping) * new + damping * r
        p_new = 0.5 * (1.0 + np.tanh(0.5 * new))
        delta = float(np.max(np.abs(p_new - p_old)))
        r, p_old = new, p_new
        diag.rounds_run += 1
        diag.max_message_delta.append(delta)
        if delta < tol:
            diag.converged = True
            break
    return h + g.incoming_sum(r), diag


def sum_product(model: IsingModel, T: int = 100, damping: float = 0.0, tol: float = 1e-8):
    """Approximate marginals P(y_i = 1) after at most ``T`` flooding rounds.

    Stops early once the largest change of any normalized message (in
    probability) falls below ``tol``; ``tol=0`` always runs ``T`` rounds.
    Returns ``(probs, diagnostics)``.
    """
    logodds, diag = _run(model, T, damping, tol, max_product=False)
    probs = np.exp(-np.logaddexp(0.0, -logodds))
    return probs, diag


def max_product(model: IsingModel, T: int = 100, damping: float = 0.0, tol: float = 1e-8):
    """Per-node max-marginal decoding; ties resolve to 0."""
    logodds, diag = _run(model, T, damping, tol, max_product=True)
    return (logodds > 0).astype(np.int64), diag


def mooij_contraction_check(model: IsingModel):
    """max_i (|N(i)| - 1) * max_{j in N(i)} tanh|J_ij| and whether it is < 1.

    Neighborhoods use nonzero couplings only.
    """
    p = model.nonzero_pairs()
    if len(p) == 0:
        return 0.0, True
    t = np.tanh(np.abs(model.J[model.J != 0]))
    m = model.num_vars
    nodes = np.concatenate([p[:, 0], p[:, 1]])
    deg = np.bincount(nodes, minlength=m)
    tmax = np.zeros(m)
    np.maximum.at(tmax, nodes, np.concatenate([t, t]))
    value = float(np.max((deg - 1) * tmax))
    return value, value < 1.0


class NonBacktrackingOperator:
    """Matrix-free edge-incidence operator on oriented edges.

    Row ``i<-j`` has ones in columns ``j<-k`` for every neighbor k of j other
    than i. Oriented edge ``e`` here is stored as (head=i, tail=j).
    """

    def __init__(self, pairs: np.ndarray, m: int):
        if len(pairs) == 0:
            raise ValueError("operator needs at least one edge")
        self.head = np.concatenate([pairs[:, 0], pairs[:, 1]])
        self.tail = np.concatenate([pairs[:, 1], pairs[:, 0]])
        E = len(pairs)
        self.rev = np.concatenate([np.arange(E, 2 * E), np.arange(E)])
        self.m = m
        self.shape = (2 * E, 2 * E)

    def matvec(self, x):
        # (Hx)[i<-j] = sum_{k in N(j)} x[j<-k] - x[j<-i]
        s = np.bincount(self.head, weights=x, minlength=self.m)
        return s[self.tail] - x[self.rev]

    def rmatvec(self, y):
        # (H^T y)[j<-k] = sum_{i in N(j)} y[i<-j] - y[k<-j]
        t = np.bincount(self.tail, weights=y, minlength=self.m)
        return t[self.head] - y[self.rev]

    def dense(self) -> np.ndarray:
        n = self.shape[0]
        H = np.zeros(self.shape)
        for e in range(n):
            i, j = self.head[e], self.tail[e]
            cols = np.nonzero((self.head == j) & (self.tail != i))[0]
            H[e, cols] = 1.0
        return H


def spectral_norm(op: NonBacktrackingOperator, power_iters: int = 200, tol: float = 1e-10, seed: int = 0):
    """Largest singular value via power iteration on H^T H."""
    v = np.random.default_rng(seed).random(op.shape[1]) + 0.5
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(power_iters):
        w = op.rmatvec(op.matvec(v))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        new = math.sqrt(nw)
        v = w / nw
        if abs(new - sigma) <= tol * max(new, 1.0):
            sigma = new
            break
        sigma = new
    return sigma


def linearized_stability(model: IsingModel, power_iters: int = 200, seed: int = 0):
    """(||H||_2, atanh(1/||H||_2)) for the graph of nonzero couplings.

    The threshold is infinite when ``||H||_2 <= 1``.
    """
    p = model.nonzero_pairs()
    if len(p) == 0:
        raise ValueError("linearized stability needs a model with at least one edge")
    norm = spectral_norm(NonBacktrackingOperator(p, model.num_vars), power_iters, seed=seed)
    beta = math.inf if norm <= 1.0 + 1e-9 else math.atanh(1.0 / norm)
    return norm, beta
