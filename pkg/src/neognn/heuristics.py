"""Classical link-prediction heuristics.

Every scorer takes a :class:`~neognn.graph.Graph` and a node pair and
returns a float.  By default the binarized adjacency is used (merged edge
weights clamped to 1); pass ``weighted=True`` to use weighted degrees and
weighted walks instead.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError


class HeuristicKind(str, enum.Enum):
    CN = "cn"
    JACCARD = "jaccard"
    AA = "aa"
    RA = "ra"
    PA = "pa"
    KATZ = "katz"
    PAGERANK = "pagerank"
    SIMRANK = "simrank"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        aliases = {"jac": "jaccard", "pr": "pagerank", "sr": "simrank"}
        key = str(name).strip().lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(
                f"unknown heuristic {name!r}; choose from {', '.join(k.value for k in cls)}"
            ) from None


@dataclass(frozen=True)
class HeuristicParams:
    katz_beta: float = 0.05
    katz_hops: int = 5
    damping: float = 0.85
    pagerank_iters: int = 100
    simrank_decay: float = 0.8
    simrank_iters: int = 5
    weighted: bool = False

    def __post_init__(self):
        if not 0 < self.katz_beta:
            raise ValueError("katz_beta must be positive")
        if self.katz_hops < 1:
            raise ValueError("katz_hops must be >= 1")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if not 0 < self.simrank_decay < 1:
            raise ValueError("simrank_decay must lie in (0, 1)")
        if self.pagerank_iters < 1 or self.simrank_iters < 1:
            raise ValueError("iteration counts must be >= 1")


DEFAULT_PARAMS = HeuristicParams()


def _adjacency(g, params):
    return g.adjacency if params.weighted else g.binary_adjacency()


def _degrees(g, params):
    return g.degrees if params.weighted else g.binary_degrees()


def _common(g, u, v):
    return np.intersect1d(g.neighbors(u), g.neighbors(v), assume_unique=True)


def score_cn(g, u, v, params=DEFAULT_PARAMS):
    return float(_common(g, u, v).shape[0])


def score_ra(g, u, v, params=DEFAULT_PARAMS):
    deg = _degrees(g, params)
    return float(sum(1.0 / deg[k] for k in _common(g, u, v)))


def aa_weight(d):
    """Adamic-Adar node weight ``1 / ln d``; zero for ``d <= 1``."""
    return 1.0 / math.log(d) if d > 1 else 0.0


def score_aa(g, u, v, params=DEFAULT_PARAMS):
    deg = _degrees(g, params)
    return float(sum(aa_weight(deg[k]) for k in _common(g, u, v)))


def score_jaccard(g, u, v, params=DEFAULT_PARAMS):
    nu, nv = g.neighbors(u), g.neighbors(v)
    union = np.union1d(nu, nv).shape[0]
    if union == 0:
        return 0.0
    return np.intersect1d(nu, nv, assume_unique=True).shape[0] / union


def score_pa(g, u, v, params=DEFAULT_PARAMS):
    deg = _degrees(g, params)
    return float(deg[u] * deg[v])


def _katz_row(g, u, params):
    a = _adjacency(g, params).to_scipy()
    walk = np.zeros(g.num_nodes)
    walk[u] = 1.0
    total = np.zeros(g.num_nodes)
    for l in range(1, params.katz_hops + 1):
        walk = a @ walk
        total += params.katz_beta**l * walk
    return total


def score_katz(g, u, v, params=DEFAULT_PARAMS):
    """Truncated Katz index ``sum_{l=1..hops} beta^l (A^l)_uv``."""
    return float(_katz_row(g, u, params)[v])


def _transition(g, params):
    a = _adjacency(g, params).to_scipy()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return (sp.diags(inv) @ a).T.tocsr(), deg == 0


def _rooted_pagerank(g, root, params, transition=None):
    """Random walk with restart to ``root``; dangling mass returns to the root."""
    pt, dangling = transition if transition is not None else _transition(g, params)
    d = params.damping
    restart = np.zeros(g.num_nodes)
    restart[root] = 1.0
    pi = restart.copy()
    for _ in range(params.pagerank_iters):
        lost = pi[dangling].sum()
        pi = d * (pt @ pi) + (1.0 - d + d * lost) * restart
    return pi


def score_pagerank(g, u, v, params=DEFAULT_PARAMS):
    """Symmetrised rooted PageRank ``pi_u(v) + pi_v(u)``."""
    tr = _transition(g, params)
    return float(_rooted_pagerank(g, u, params, tr)[v] + _rooted_pagerank(g, v, params, tr)[u])


def _ball(g, seeds, radius):
    seen = set(int(s) for s in seeds)
    frontier = list(seen)
    for _ in range(radius):
        nxt = []
        for x in frontier:
            for y in g.neighbors(x):
                y = int(y)
                if y not in seen:
                    seen.add(y)
                    nxt.append(y)
        frontier = nxt
    return np.array(sorted(seen), dtype=np.int64)


def _simrank_matrix(a, decay, iters):
    """Dense SimRank: ``S <- C * W^T S W`` with unit diagonal, ``W`` column-normalised."""
    a = sp.csr_matrix(a).toarray()
    deg = a.sum(axis=0)
    w = np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)
    s = np.eye(a.shape[0])
    for _ in range(iters):
        s = decay * (w.T @ s @ w)
        np.fill_diagonal(s, 1.0)
    return s


def score_simrank(g, u, v, params=DEFAULT_PARAMS):
    """SimRank after ``simrank_iters`` rounds, evaluated on the ball around ``{u, v}``.

    After ``k`` rounds the score only depends on nodes within ``k`` hops of
    either endpoint, so the induced radius-``k`` subgraph gives the exact value.
    """
    if u == v:
        return 1.0
    nodes = _ball(g, (u, v), params.simrank_iters)
    sub = _adjacency(g, params).to_scipy()[nodes][:, nodes]
    s = _simrank_matrix(sub, params.simrank_decay, params.simrank_iters)
    iu, iv = np.searchsorted(nodes, [u, v])
    return float(s[iu, iv])


SCORERS = {
    HeuristicKind.CN: score_cn,
    HeuristicKind.JACCARD: score_jaccard,
    HeuristicKind.AA: score_aa,
    HeuristicKind.RA: score_ra,
    HeuristicKind.PA: score_pa,
    HeuristicKind.KATZ: score_katz,
    HeuristicKind.PAGERANK: score_pagerank,
    HeuristicKind.SIMRANK: score_simrank,
}


def score_pair(g, kind, u, v, params=DEFAULT_PARAMS):
    return SCORERS[HeuristicKind.parse(kind)](g, u, v, params)


def score_all_pairs(g, kind, pairs, params=DEFAULT_PARAMS):
    """Score every ``(u, v)`` in ``pairs``; equal to looping :func:`score_pair`.

    Walk-based kinds reuse per-source vectors across pairs, which yields the
    same floats as the per-pair path because each vector is computed identically.
    """
    kind = HeuristicKind.parse(kind)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    for idx, (u, v) in enumerate(pairs):
        if not (0 <= u < g.num_nodes and 0 <= v < g.num_nodes):
            raise DataError(f"pair {idx} ({u}, {v}) references a node outside [0, {g.num_nodes})")
    out = np.empty(pairs.shape[0], dtype=np.float64)
    if kind is HeuristicKind.KATZ:
        rows = {}
        for idx, (u, v) in enumerate(pairs):
            if u not in rows:
                rows[u] = _katz_row(g, u, params)
            out[idx] = rows[u][v]
    elif kind is HeuristicKind.PAGERANK:
        tr = _transition(g, params)
        rows = {}
        for idx, (u, v) in enumerate(pairs):
            for x in (u, v):
                if x not in rows:
                    rows[x] = _rooted_pagerank(g, x, params, tr)
            out[idx] = rows[u][v] + rows[v][u]
    else:
        fn = SCORERS[kind]
        for idx, (u, v) in enumerate(pairs):
            out[idx] = fn(g, int(u), int(v), params)
    return out
