"""Negative sampling, Adam, the supervised training loop and heuristic fitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import heuristics as H
from .errors import DataError, NumericError
from .graph import subgraph_without
from .metrics import auc, hits_at_k, mrr
from .model import (
    backward_logits,
    forward,
    loss_and_grad,
    make_context,
    structural_scores,
)

log = logging.getLogger(__name__)

ENUMERATE_LIMIT = 4096  # fall back to explicit non-edge enumeration below this many nodes


def canonical(pairs):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return np.stack([pairs.min(axis=1), pairs.max(axis=1)], axis=1)


def pair_keys(pairs, n):
    c = canonical(pairs)
    return c[:, 0] * n + c[:, 1]


def sample_negatives(g, k, rng, exclude=None, max_rounds=50):
    """``k`` distinct node pairs ``u < v`` that are non-edges of ``g``.

    Rejection sampling first; if that stalls on a small dense graph, the
    remaining pairs are drawn from an explicit enumeration of non-edges.

    :param rng: a seed or a ``numpy.random.Generator``
    :param exclude: extra pairs that must not be returned (e.g. held-out positives)
    """
    rng = np.random.default_rng(rng)
    n = g.num_nodes
    forbidden = set(g.edge_keys().tolist())
    if exclude is not None and len(exclude):
        forbidden.update(pair_keys(exclude, n).tolist())
    total = n * (n - 1) // 2
    if total - len(forbidden) < k:
        raise DataError(f"graph has {max(total - len(forbidden), 0)} non-edges, cannot sample {k}")
    if k == 0:
        return np.zeros((0, 2), dtype=np.int64)
    chosen = []
    seen = set()
    for _ in range(max_rounds):
        need = k - len(chosen)
        if need == 0:
            break
        u = rng.integers(0, n, size=2 * need + 16)
        v = rng.integers(0, n, size=2 * need + 16)
        for a, b in zip(u.tolist(), v.tolist()):
            if a == b:
                continue
            key = min(a, b) * n + max(a, b)
            if key in forbidden or key in seen:
                continue
            seen.add(key)
            chosen.append(key)
            if len(chosen) == k:
                break
    if len(chosen) < k:
        if n > ENUMERATE_LIMIT:
            raise DataError(f"could only sample {len(chosen)} of {k} non-edges")
        iu, iv = np.triu_indices(n, 1)
        keys = iu.astype(np.int64) * n + iv
        mask = ~np.isin(keys, np.fromiter(forbidden | seen, dtype=np.int64, count=len(forbidden | seen)))
        pool = keys[mask]
        extra = rng.choice(pool, size=k - len(chosen), replace=False)
        chosen.extend(np.sort(extra).tolist())
    keys = np.asarray(chosen, dtype=np.int64)
    return np.stack([keys // n, keys % n], axis=1)


@dataclass
class SplitDataset:
    """Positive edges per role plus fixed validation/test negatives."""

    train_pos: np.ndarray
    valid_pos: np.ndarray
    test_pos: np.ndarray
    valid_neg: np.ndarray
    test_neg: np.ndarray
    num_nodes: int

    def check_disjoint(self):
        n = self.num_nodes
        roles = {"train": self.train_pos, "valid": self.valid_pos, "test": self.test_pos}
        keys = {r: set(pair_keys(p, n).tolist()) for r, p in roles.items()}
        for a, b in (("train", "valid"), ("train", "test"), ("valid", "test")):
            if keys[a] & keys[b]:
                raise DataError(f"{a} and {b} splits share {len(keys[a] & keys[b])} edge(s)")
        pos = keys["train"] | keys["valid"] | keys["test"]
        for role, negs in (("valid", self.valid_neg), ("test", self.test_neg)):
            clash = set(pair_keys(negs, n).tolist()) & pos
            if clash:
                raise DataError(f"{role} negatives contain {len(clash)} positive edge(s)")


def split_edges(g, ratios, seed, negatives_per_positive=1):
    """Uniform random partition of ``g``'s edges into train/valid/test.

    Validation and test negatives are sampled once, avoiding every edge of
    the full graph.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three non-negative numbers summing to 1, got {ratios.tolist()}")
    rng = np.random.default_rng(seed)
    e = g.num_edges
    perm = rng.permutation(e)
    n_valid = int(round(ratios[1] * e))
    n_test = int(round(ratios[2] * e))
    n_train = e - n_valid - n_test
    if min(n_train, n_valid, n_test) == 0:
        raise DataError(f"ratios {ratios.tolist()} leave an empty split for {e} edges")
    edges = g.edges
    train = edges[np.sort(perm[:n_train])]
    valid = edges[np.sort(perm[n_train:n_train + n_valid])]
    test = edges[np.sort(perm[n_train + n_valid:])]
    negs = sample_negatives(g, negatives_per_positive * (n_valid + n_test), rng)
    negs = negs[rng.permutation(negs.shape[0])]
    k = negatives_per_positive * n_valid
    ds = SplitDataset(train, valid, test, negs[:k], negs[k:], g.num_nodes)
    train_graph = subgraph_without(g, np.concatenate([valid, test]))
    return ds, train_graph


class Adam:
    """Adam over a dict of arrays, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params, grads, frozen=()):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k in sorted(params):
            if k in frozen or k not in grads:
                continue
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1024
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    negatives_per_positive: int = 1
    seed: int = 0
    patience: int = 20
    metric: str = "auc"  # "auc", "mrr" or "hits@K"
    frozen: tuple = ()  # tensor-name prefixes excluded from updates
    fit_pairs_per_edge: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.negatives_per_positive < 0:
            raise ValueError("epochs, batch_size and negatives_per_positive must be non-negative counts")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        parse_metric(self.metric)
        self.frozen = tuple(self.frozen)


def parse_metric(name):
    name = name.strip().lower()
    if name in ("auc", "mrr"):
        return name, None
    if name.startswith("hits@"):
        k = int(name[5:])
        if k < 1:
            raise ValueError("hits@K needs K >= 1")
        return "hits", k
    raise ValueError(f"unknown metric {name!r}")


def evaluate(scores_pos, scores_neg, metric):
    kind, k = parse_metric(metric)
    if kind == "auc":
        return auc(scores_pos, scores_neg)
    if kind == "hits":
        return hits_at_k(scores_pos, scores_neg, k)
    # one shared negative pool: each positive is ranked against all negatives
    return mrr((p, scores_neg) for p in scores_pos)


def predict(params, ctx, pairs, batch_size=4096):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    out = np.empty(pairs.shape[0])
    for lo in range(0, pairs.shape[0], batch_size):
        out[lo:lo + batch_size] = forward(params, ctx, pairs[lo:lo + batch_size]).y_hat
    return out


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # (epoch, mean loss, valid metric)
    best_epoch: int = 0
    best_metric: float = float("-inf")
    initial_metric: float = float("nan")


def _frozen_names(params, prefixes):
    return {k for k in params.tensors if any(k == p or k.startswith(p + ".") for p in prefixes)}


def leakage_guard(graph, split):
    """Refuse to train if any held-out positive is present in the training adjacency."""
    n = graph.num_nodes
    train_keys = graph.edge_keys()
    for role, pos in (("valid", split.valid_pos), ("test", split.test_pos)):
        if len(pos) and np.isin(pair_keys(pos, n), train_keys).any():
            raise DataError(f"{role} positives appear in the training graph (label leakage)")


def train(g, features, split, cfg, init, context=None):
    """Adam-optimise ``init`` on the training graph; return the best-on-validation params.

    ``g`` must contain training edges only.  Training negatives are redrawn
    every epoch; the whole run is a deterministic function of ``cfg.seed``.
    """
    leakage_guard(g, split)
    params = init.copy()
    ctx = context if context is not None else make_context(g, params.config, features)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    frozen = _frozen_names(params, cfg.frozen)
    history = TrainLog()

    def validate(p):
        if len(split.valid_pos) == 0 or len(split.valid_neg) == 0:
            return 0.0
        return evaluate(predict(p, ctx, split.valid_pos), predict(p, ctx, split.valid_neg), cfg.metric)

    best = params.copy()
    history.initial_metric = history.best_metric = validate(params)
    stale = 0
    pos = np.asarray(split.train_pos, dtype=np.int64).reshape(-1, 2)
    for epoch in range(1, cfg.epochs + 1):
        negs = sample_negatives(g, cfg.negatives_per_positive * pos.shape[0], rng,
                                exclude=np.concatenate([split.valid_pos, split.test_pos]))
        rows = np.concatenate([
            np.column_stack([pos, np.ones(pos.shape[0])]),
            np.column_stack([negs, np.zeros(negs.shape[0])]),
        ])
        rows = rows[rng.permutation(rows.shape[0])]
        total = 0.0
        for b, lo in enumerate(range(0, rows.shape[0], cfg.batch_size)):
            batch = rows[lo:lo + cfg.batch_size]
            try:
                value, grads = loss_and_grad(params, ctx, batch)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            opt.step(params.tensors, grads, frozen)
            total += value
        metric = validate(params)
        history.epochs.append((epoch, total / max(rows.shape[0], 1), metric))
        log.info("epoch %d loss %.6f valid %s %.6f", epoch, total / max(rows.shape[0], 1), cfg.metric, metric)
        if metric > history.best_metric:
            history.best_metric, history.best_epoch = metric, epoch
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, history


def fit_heuristic(g, kind, model_init, cfg, heuristic_params=H.DEFAULT_PARAMS, pairs=None, context=None):
    """Regress the raw overlap score ``z_u . z_v`` onto a heuristic by mean squared error.

    Training pairs are the graph's edges plus ``fit_pairs_per_edge`` sampled
    non-edges per edge, unless ``pairs`` is given.  Returns ``(params, losses)``.
    """
    if model_init.config.use_gcn:
        raise ValueError("heuristic fitting needs a model without the GCN branch")
    rng = np.random.default_rng(cfg.seed)
    if pairs is None:
        negs = sample_negatives(g, cfg.fit_pairs_per_edge * g.num_edges, rng)
        pairs = np.concatenate([g.edges, negs])
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise DataError("heuristic fitting needs at least one training pair")
    target = H.score_all_pairs(g, kind, pairs, heuristic_params)
    params = model_init.copy()
    ctx = context if context is not None else make_context(g, params.config)
    opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    frozen = _frozen_names(params, cfg.frozen)
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(pairs.shape[0])
        total = 0.0
        for lo in range(0, order.shape[0], cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            fwd = forward(params, ctx, pairs[idx])
            resid = fwd.t - target[idx]
            total += float(np.dot(resid, resid))
            g_t = 2.0 * resid / idx.shape[0]
            grads = backward_logits(params, ctx, fwd, g_t)
            opt.step(params.tensors, grads, frozen)
        if not np.isfinite(total):
            raise NumericError(f"non-finite fitting loss at epoch {epoch}")
        losses.append(total / pairs.shape[0])
    return params, losses


__all__ = [
    "Adam", "SplitDataset", "TrainConfig", "TrainLog", "evaluate", "fit_heuristic", "leakage_guard",
    "parse_metric", "predict", "sample_negatives", "split_edges", "structural_scores", "train",
]
