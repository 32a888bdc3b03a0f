"""Ranking metrics, rank correlation and the adjacency-correlation diagnostic.

Ties are resolved pessimistically in Hits@K and MRR: a positive tied with a
negative is ranked below it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError
from .graph import power_series


@dataclass
class EvalReport:
    metric: str
    value: float
    std: float | None = None
    k: int | None = None
    num_pos: int = 0
    num_neg: int = 0
    seeds: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def as_lines(self):
        """Machine-readable ``key=value`` lines."""
        out = [f"metric={self.metric}", f"value={self.value!r}"]
        if self.std is not None:
            out.append(f"std={self.std!r}")
        if self.k is not None:
            out.append(f"k={self.k}")
        out += [f"num_pos={self.num_pos}", f"num_neg={self.num_neg}"]
        if self.seeds:
            out.append("seeds=" + ",".join(str(s) for s in self.seeds))
        return out


def aggregate(reports):
    """Mean and sample std of one metric across seeds."""
    vals = [r.value for r in reports]
    first = reports[0]
    return EvalReport(
        first.metric,
        float(np.mean(vals)),
        float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
        first.k,
        first.num_pos,
        first.num_neg,
        [s for r in reports for s in r.seeds],
        vals,
    )


def hits_at_k(pos_scores, neg_scores, k):
    """Fraction of positives scoring strictly above the k-th best negative."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if neg.size == 0:
        raise ValueError("need at least one negative score")
    if pos.size == 0:
        raise ValueError("need at least one positive score")
    if k > neg.size:
        warnings.warn(f"k={k} exceeds {neg.size} negatives; every positive counts as a hit")
        return 1.0
    threshold = np.partition(neg, neg.size - k)[neg.size - k]
    return float(np.count_nonzero(pos > threshold)) / pos.size


def mrr(per_source):
    """Mean reciprocal rank; ``per_source`` yields ``(pos_score, neg_scores)``."""
    per_source = list(per_source)
    if not per_source:
        raise ValueError("mrr of an empty list")
    total = 0.0
    for pos, negs in per_source:
        negs = np.asarray(negs, dtype=np.float64)
        if negs.size == 0:
            raise ValueError("every source needs at least one negative")
        total += 1.0 / (1 + np.count_nonzero(negs >= pos))
    return total / len(per_source)


def auc(pos_scores, neg_scores):
    """ROC AUC as ``P(pos > neg) + 0.5 P(pos == neg)`` via the rank-sum statistic."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc needs positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    u_stat = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u_stat / (pos.size * neg.size))


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(np.dot(da, da)))
    sb = math.sqrt(float(np.dot(db, db)))
    if sa == 0.0 or sb == 0.0:
        raise UndefinedMetricError("correlation undefined: a vector has zero variance")
    return float(np.dot(da, db)) / (sa * sb)


def spearman(a, b):
    """Spearman rho: Pearson correlation of average-tie ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("spearman needs two 1-d vectors of equal length")
    if a.size < 2:
        raise ValueError("spearman needs at least two observations")
    return pearson(rankdata(a), rankdata(b))


def multi_hop_indicator(g, k):
    """Binary ``A'`` with ``A'_ij = 1`` iff ``sum_{l=2..k} (A^l)_ij > 0``."""
    if k < 2:
        raise ValueError("k must be >= 2")
    series = power_series(g.binary_adjacency(), k, 1.0)
    reach = series.matrices[1].to_scipy().copy()
    for m in series.matrices[2:]:
        reach = reach + m.to_scipy()
    reach = reach.tocsr()
    reach.data[:] = 1.0
    return reach


def adjacency_correlation(g, k):
    """Pearson correlation of off-diagonal entries of binarized ``A`` and ``A'``."""
    n = g.num_nodes
    a = g.binary_adjacency().to_scipy().tocoo()
    reach = multi_hop_indicator(g, k).tocoo()
    off = n * n - n
    if off < 2:
        raise UndefinedMetricError("need at least two nodes")
    # Closed form over the n(n-1) off-diagonal cells; the vectors are 0/1.
    a_mask = a.row != a.col
    r_mask = reach.row != reach.col
    na = int(a_mask.sum())
    nr = int(r_mask.sum())
    a_keys = a.row[a_mask].astype(np.int64) * n + a.col[a_mask]
    r_keys = reach.row[r_mask].astype(np.int64) * n + reach.col[r_mask]
    both = int(np.intersect1d(a_keys, r_keys, assume_unique=True).shape[0])
    cov = both / off - (na / off) * (nr / off)
    va = na / off - (na / off) ** 2
    vr = nr / off - (nr / off) ** 2
    if va <= 0 or vr <= 0:
        raise UndefinedMetricError("correlation undefined: A or A' is constant off the diagonal")
    return cov / math.sqrt(va * vr)
