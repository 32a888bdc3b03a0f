"""Neighborhood-overlap-aware link scorer fused with a GCN feature branch.

Structural branch::

    s_i   = sum_{j in N(i)} f_edge(A_ij)
    x_i   = f_node(s_i)
    Z_ik  = g_phi(C_ik * x_k)        for stored entries of C = sum_l beta^(l-1) A^l
    p_struct(u, v) = sigmoid(z_u . z_v)

Feature branch: ``H = GCN(X, D~^-1/2 (A+I) D~^-1/2; W)`` and
``p_feat = sigmoid(s(h_u * h_v))`` with ``s`` a two-layer MLP (or a plain sum,
i.e. the inner product).  The two are fused as
``y = alpha p_struct + (1 - alpha) p_feat`` with ``alpha = sigmoid(alpha_raw)``.

All gradients are computed by hand; :func:`backward` is checked against
central finite differences in the test-suite.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import DataError, NumericError
from .graph import SparseMatrix, gcn_normalize, power_series
from .nn import Analytic, Mlp, make_scalar_map

CHECKPOINT_VERSION = 1
BCE_EPS = 1e-7

SCALAR_KINDS = ("mlp",) + Analytic.KINDS


@dataclass(frozen=True)
class ModelConfig:
    hops: int = 2
    beta: float = 0.1
    tau: float = 0.0
    lambdas: tuple = (1.0, 1.0, 1.0)
    f_edge: str = "mlp"
    f_node: str = "mlp"
    g_phi: str = "mlp"
    hidden: int = 32
    hidden_act: str = "relu"
    out_act: str = "identity"
    feature_input: str = "adjacency"  # or "series"
    binarize: bool = True
    use_gcn: bool = True
    gcn_layers: int = 3
    gcn_hidden: int = 256
    embedding_dim: int = 256
    predictor: str = "mlp"  # or "dot"
    predictor_hidden: int = 256

    def __post_init__(self):
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        if self.beta < 0 or self.tau < 0:
            raise ValueError("beta and tau must be non-negative")
        if len(self.lambdas) != 3 or min(self.lambdas) < 0:
            raise ValueError("lambdas must be three non-negative weights")
        for name in ("f_edge", "f_node", "g_phi"):
            if getattr(self, name) not in SCALAR_KINDS:
                raise ValueError(f"{name} must be one of {SCALAR_KINDS}")
        if self.feature_input not in ("adjacency", "series"):
            raise ValueError("feature_input must be 'adjacency' or 'series'")
        if self.predictor not in ("mlp", "dot"):
            raise ValueError("predictor must be 'mlp' or 'dot'")
        if self.use_gcn and self.gcn_layers < 1:
            raise ValueError("gcn_layers must be >= 1")
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))

    @classmethod
    def frozen(cls, f_node, **kw):
        """Parameter-free structural scorer (identity edge and scale maps)."""
        base = dict(f_edge="identity", f_node=f_node, g_phi="identity", hops=1, use_gcn=False)
        base.update(kw)
        return cls(**base)

    def to_dict(self):
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class NeoModelParams:
    """Trainable tensors keyed by dotted path plus the config that shaped them.

    ``feature_dim`` is the width of the raw node features, or ``None`` when
    the GCN branch starts from the learnable ``embedding`` table.
    """

    config: ModelConfig
    num_nodes: int
    feature_dim: int | None
    tensors: dict = field(default_factory=dict)

    @property
    def alpha(self):
        return float(expit(self.tensors["alpha_raw"][0])) if self.config.use_gcn else 1.0

    def copy(self):
        return NeoModelParams(
            self.config, self.num_nodes, self.feature_dim,
            {k: v.copy() for k, v in self.tensors.items()},
        )

    def num_scalars(self):
        return int(sum(v.size for v in self.tensors.values()))


def _modules(cfg, feature_dim):
    m = {
        "f_edge": make_scalar_map("f_edge", cfg.f_edge, cfg.hidden, cfg.hidden_act, cfg.out_act),
        "f_node": make_scalar_map("f_node", cfg.f_node, cfg.hidden, cfg.hidden_act, cfg.out_act),
        "g_phi": make_scalar_map("g_phi", cfg.g_phi, cfg.hidden, cfg.hidden_act, cfg.out_act),
    }
    if cfg.use_gcn and cfg.predictor == "mlp":
        m["predictor"] = Mlp("predictor", cfg.gcn_hidden, cfg.predictor_hidden, 1, cfg.hidden_act, "identity")
    return m


def gcn_dims(cfg, feature_dim):
    first = feature_dim if feature_dim is not None else cfg.embedding_dim
    return [first] + [cfg.gcn_hidden] * cfg.gcn_layers


def init_params(cfg, num_nodes, feature_dim=None, seed=0):
    """Random initial parameters; identical seeds give identical tensors."""
    rng = np.random.default_rng(seed)
    tensors = {}
    mods = _modules(cfg, feature_dim)
    for name in ("f_edge", "f_node", "g_phi"):
        tensors.update(mods[name].init(rng))
    if cfg.use_gcn:
        if feature_dim is None:
            tensors["embedding"] = rng.normal(0.0, 1.0, size=(num_nodes, cfg.embedding_dim))
        dims = gcn_dims(cfg, feature_dim)
        for l in range(cfg.gcn_layers):
            lim = np.sqrt(6.0 / (dims[l] + dims[l + 1]))
            tensors[f"gcn.w{l}"] = rng.uniform(-lim, lim, size=(dims[l], dims[l + 1]))
        if "predictor" in mods:
            tensors.update(mods["predictor"].init(rng))
        tensors["alpha_raw"] = np.zeros(1)
    return NeoModelParams(cfg, int(num_nodes), feature_dim, tensors)


@dataclass(frozen=True, eq=False)
class GraphContext:
    """Everything precomputed from the (training) graph for one config."""

    graph: object
    adjacency: SparseMatrix
    series: object
    feature_source: SparseMatrix
    a_norm: SparseMatrix | None
    features: np.ndarray | None

    @property
    def num_nodes(self):
        return self.graph.num_nodes


def make_context(g, cfg, features=None, series=None):
    """Precompute adjacency powers and the GCN propagation matrix once."""
    adj = g.binary_adjacency() if cfg.binarize else g.adjacency
    if series is None:
        series = power_series(adj, cfg.hops, cfg.beta, cfg.tau)
    elif (series.hops, series.beta, series.tau) != (cfg.hops, cfg.beta, cfg.tau):
        raise ValueError("power series does not match the model config")
    source = adj if cfg.feature_input == "adjacency" else series.combined
    a_norm = gcn_normalize(adj) if cfg.use_gcn else None
    if features is not None:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != g.num_nodes:
            raise DataError(f"feature matrix has {features.shape[0]} rows, graph has {g.num_nodes} nodes")
    return GraphContext(g, adj, series, source, a_norm, features)


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


# --- structural branch -------------------------------------------------------


def struct_forward(params, ctx):
    """Structural features ``x`` for every node, plus the backward cache."""
    mods = _modules(params.config, params.feature_dim)
    src = ctx.feature_source
    e_out, e_cache = mods["f_edge"].forward(params.tensors, src.values[:, None])
    agg = np.bincount(src.row_ids(), weights=e_out[:, 0], minlength=src.num_rows)
    x_out, n_cache = mods["f_node"].forward(params.tensors, agg[:, None])
    x = x_out[:, 0]
    _check_finite("structural features", x)
    return x, (e_cache, n_cache, src)


def struct_feature(g, params, ctx=None):
    """Structural feature vector ``x_struct`` (one scalar per node)."""
    ctx = ctx if ctx is not None else make_context(g, params.config)
    return struct_forward(params, ctx)[0]


def _embed_rows(params, combined_rows, x):
    """Apply ``g_phi`` to the stored entries of ``combined_rows @ diag(x)``."""
    mods = _modules(params.config, params.feature_dim)
    c = combined_rows.data
    cols = combined_rows.indices
    z_in = c * x[cols]
    z_out, g_cache = mods["g_phi"].forward(params.tensors, z_in[:, None])
    z = sp.csr_matrix((z_out[:, 0], cols, combined_rows.indptr), shape=combined_rows.shape)
    return z, g_cache


def overlap_embed(g, x_struct, series, params):
    """Full overlap-aware representation ``Z`` as a :class:`SparseMatrix`.

    Keeps the sparsity pattern of the combined power series (entries are not
    pruned even when ``g_phi`` maps them to zero).
    """
    x_struct = np.asarray(x_struct, dtype=np.float64)
    if x_struct.shape != (series.combined.num_cols,):
        raise ValueError(f"x_struct has shape {x_struct.shape}, expected ({series.combined.num_cols},)")
    z, _ = _embed_rows(params, series.combined.to_scipy(), x_struct)
    return SparseMatrix(
        z.shape[0], z.shape[1], z.indptr.astype(np.int64), z.indices.astype(np.int64),
        z.data.astype(np.float64),
    )


def _row_dots(z, ru, rv):
    return np.asarray(z[ru].multiply(z[rv]).sum(axis=1)).ravel()


# --- feature branch ----------------------------------------------------------


def gcn_forward_cached(params, ctx):
    cfg = params.config
    h = ctx.features if ctx.features is not None else params.tensors["embedding"]
    a = ctx.a_norm.to_scipy()
    cache = []
    for l in range(cfg.gcn_layers):
        prop = a @ h
        pre = prop @ params.tensors[f"gcn.w{l}"]
        last = l == cfg.gcn_layers - 1
        h_next = pre if last else np.maximum(pre, 0.0)
        cache.append((prop, pre))
        h = h_next
    _check_finite("GCN output", h)
    return h, cache


def gcn_forward(g, features, params, ctx=None):
    """Node representations ``H`` from the GCN branch (ReLU between layers)."""
    if not params.config.use_gcn:
        raise ValueError("model was configured without the GCN branch")
    if ctx is None:
        ctx = make_context(g, params.config, features)
    dims = gcn_dims(params.config, params.feature_dim)
    given = ctx.features if ctx.features is not None else params.tensors.get("embedding")
    if given is None or given.shape[1] != dims[0]:
        raise ValueError("input feature width does not match the first GCN layer")
    return gcn_forward_cached(params, ctx)[0]


def _gcn_backward(params, ctx, cache, g_h, grads):
    cfg = params.config
    a = ctx.a_norm.to_scipy()
    for l in reversed(range(cfg.gcn_layers)):
        prop, pre = cache[l]
        g_pre = g_h if l == cfg.gcn_layers - 1 else g_h * (pre > 0.0)
        grads[f"gcn.w{l}"] = prop.T @ g_pre
        g_prop = g_pre @ params.tensors[f"gcn.w{l}"].T
        g_h = a.T @ g_prop
    if ctx.features is None:
        grads["embedding"] = g_h


# --- pair scoring ------------------------------------------------------------


@dataclass
class Forward:
    pairs: np.ndarray
    t: np.ndarray  # structural logits z_u . z_v
    q: np.ndarray | None  # feature logits s(h_u, h_v)
    p_struct: np.ndarray
    p_feat: np.ndarray | None
    y_hat: np.ndarray
    alpha: float
    caches: dict


def forward(params, ctx, pairs):
    """Score a batch of ``(u, v)`` pairs, keeping what :func:`backward_logits` needs."""
    cfg = params.config
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n = ctx.num_nodes
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise DataError(f"pair references a node outside [0, {n})")
    x, s_cache = struct_forward(params, ctx)
    rows = np.unique(pairs)
    c_rows = ctx.series.combined.to_scipy()[rows]
    z, g_cache = _embed_rows(params, c_rows, x)
    ru = np.searchsorted(rows, pairs[:, 0])
    rv = np.searchsorted(rows, pairs[:, 1])
    t = _row_dots(z, ru, rv)
    _check_finite("structural logits", t)
    p_struct = expit(t)
    caches = {"struct": s_cache, "x": x, "rows": rows, "c_rows": c_rows, "z": z,
              "g_phi": g_cache, "ru": ru, "rv": rv}
    if not cfg.use_gcn:
        return Forward(pairs, t, None, p_struct, None, p_struct.copy(), 1.0, caches)

    h, gcn_cache = gcn_forward_cached(params, ctx)
    # one predictor evaluation per distinct pair, so repeats give bit-identical logits
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    prod = h[uniq[:, 0]] * h[uniq[:, 1]]
    if cfg.predictor == "mlp":
        q_out, p_cache = _modules(cfg, params.feature_dim)["predictor"].forward(params.tensors, prod)
        q = q_out[:, 0][inv]
    else:
        q, p_cache = prod.sum(axis=1)[inv], None
    _check_finite("feature logits", q)
    p_feat = expit(q)
    alpha = float(expit(params.tensors["alpha_raw"][0]))
    y_hat = alpha * p_struct + (1.0 - alpha) * p_feat
    caches.update(h=h, gcn=gcn_cache, predictor=p_cache, uniq=uniq, inv=inv)
    return Forward(pairs, t, q, p_struct, p_feat, y_hat, alpha, caches)


def backward_logits(params, ctx, fwd, g_t, g_q=None, g_alpha_raw=0.0):
    """Reverse pass from logit-level gradients to every trainable tensor."""
    cfg = params.config
    mods = _modules(cfg, params.feature_dim)
    c = fwd.caches
    grads = {}

    # structural branch: dt/dz_u = z_v, dt/dz_v = z_u, restricted to Z's pattern
    z, ru, rv, rows = c["z"], c["ru"], c["rv"], c["rows"]
    b = fwd.pairs.shape[0]
    n_rows = rows.shape[0]
    sel_u = sp.csr_matrix((g_t, (ru, np.arange(b))), shape=(n_rows, b))
    sel_v = sp.csr_matrix((g_t, (rv, np.arange(b))), shape=(n_rows, b))
    g_z_mat = (sel_u @ z[rv] + sel_v @ z[ru]).tocsr()
    g_z_mat.sum_duplicates()
    g_z_mat.sort_indices()
    ncols = z.shape[1]
    z_keys = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(z.indptr)) * ncols + z.indices
    g_keys = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(g_z_mat.indptr)) * ncols + g_z_mat.indices
    pos = np.searchsorted(z_keys, g_keys)
    pos_c = np.minimum(pos, max(z_keys.shape[0] - 1, 0))
    hit = (pos < z_keys.shape[0]) & (z_keys[pos_c] == g_keys) if z_keys.size else np.zeros(0, bool)
    g_z = np.zeros(z.data.shape[0])
    g_z[pos[hit]] = g_z_mat.data[hit]

    g_zin, gr = mods["g_phi"].backward(params.tensors, c["g_phi"], g_z[:, None])
    grads.update(gr)
    c_rows = c["c_rows"]
    g_x = np.bincount(c_rows.indices, weights=g_zin[:, 0] * c_rows.data, minlength=ctx.num_nodes)

    e_cache, n_cache, src = c["struct"]
    g_agg, gr = mods["f_node"].backward(params.tensors, n_cache, g_x[:, None])
    grads.update(gr)
    g_e = g_agg[src.row_ids()]
    _, gr = mods["f_edge"].backward(params.tensors, e_cache, g_e)
    grads.update(gr)

    if cfg.use_gcn:
        h, uniq = c["h"], c["uniq"]
        u, v = uniq[:, 0], uniq[:, 1]
        g_q = np.bincount(c["inv"], weights=g_q, minlength=uniq.shape[0])
        if cfg.predictor == "mlp":
            g_prod, gr = mods["predictor"].backward(params.tensors, c["predictor"], g_q[:, None])
            grads.update(gr)
        else:
            g_prod = np.repeat(g_q[:, None], h.shape[1], axis=1)
        g_h = np.zeros_like(h)
        np.add.at(g_h, u, g_prod * h[v])
        np.add.at(g_h, v, g_prod * h[u])
        _gcn_backward(params, ctx, c["gcn"], g_h, grads)
        grads["alpha_raw"] = np.array([g_alpha_raw])

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    return {k: grads[k] for k in params.tensors}


# --- objective ---------------------------------------------------------------


def _bce(p, y):
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    val = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p >= BCE_EPS) & (p <= 1.0 - BCE_EPS)
    grad = np.where(inside, -y / pc + (1.0 - y) / (1.0 - pc), 0.0)
    return val, grad


def loss_from_forward(params, fwd, labels):
    """Weighted sum of the three cross-entropy terms and its logit gradients.

    Without the GCN branch only the fused and structural terms remain
    (they coincide, as ``y_hat == p_struct``).
    """
    lam1, lam2, lam3 = params.config.lambdas
    y = np.asarray(labels, dtype=np.float64)
    v1, d1 = _bce(fwd.y_hat, y)
    v2, d2 = _bce(fwd.p_struct, y)
    total = lam1 * v1.sum() + lam2 * v2.sum()
    g_ps = lam2 * d2
    ps = fwd.p_struct
    if fwd.p_feat is None:
        g_ps = g_ps + lam1 * d1
        return float(total), g_ps * ps * (1.0 - ps), None, 0.0
    v3, d3 = _bce(fwd.p_feat, y)
    total += lam3 * v3.sum()
    a = fwd.alpha
    g_ps = g_ps + lam1 * d1 * a
    g_pf = lam3 * d3 + lam1 * d1 * (1.0 - a)
    g_alpha_raw = float(np.sum(lam1 * d1 * (ps - fwd.p_feat))) * a * (1.0 - a)
    pf = fwd.p_feat
    return float(total), g_ps * ps * (1.0 - ps), g_pf * pf * (1.0 - pf), g_alpha_raw


def loss_and_grad(params, ctx, batch):
    """``(loss, grads)`` for a batch of ``(u, v, label)`` rows."""
    batch = np.asarray(batch, dtype=np.float64).reshape(-1, 3)
    fwd = forward(params, ctx, batch[:, :2].astype(np.int64))
    value, g_t, g_q, g_a = loss_from_forward(params, fwd, batch[:, 2])
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    return value, backward_logits(params, ctx, fwd, g_t, g_q, g_a)


def loss(batch, ctx, params):
    """Batch objective: sum of ``l1 BCE(y_hat) + l2 BCE(p_struct) + l3 BCE(p_feat)``."""
    batch = np.asarray(batch, dtype=np.float64).reshape(-1, 3)
    fwd = forward(params, ctx, batch[:, :2].astype(np.int64))
    return loss_from_forward(params, fwd, batch[:, 2])[0]


def backward(batch, ctx, params):
    """Exact gradients of :func:`loss` for every tensor in ``params``."""
    return loss_and_grad(params, ctx, batch)[1]


def score_pairs(params, ctx, pairs):
    """``(y_hat, p_struct, p_feat)`` arrays for each pair; ``p_feat`` is None without GCN."""
    fwd = forward(params, ctx, pairs)
    return fwd.y_hat, fwd.p_struct, fwd.p_feat


def score_pair(params, ctx, u, v):
    y, ps, pf = score_pairs(params, ctx, [(u, v)])
    return float(y[0]), float(ps[0]), None if pf is None else float(pf[0])


def structural_scores(params, ctx, pairs):
    """Raw overlap scores ``z_u . z_v`` (before the sigmoid)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    x, _ = struct_forward(params, ctx)
    rows = np.unique(pairs)
    z, _ = _embed_rows(params, ctx.series.combined.to_scipy()[rows], x)
    return _row_dots(z, np.searchsorted(rows, pairs[:, 0]), np.searchsorted(rows, pairs[:, 1]))


# --- checkpoints -------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path, params, extra=None):
    """Write a byte-for-byte reproducible zip of ``.npy`` tensors plus a JSON header."""
    header = {
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "num_nodes": params.num_nodes,
        "feature_dim": params.feature_dim,
        "tensors": sorted(params.tensors),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("header.json", _ZIP_DATE), json.dumps(header, sort_keys=True, indent=1))
        for name in sorted(params.tensors):
            arr = io.BytesIO()
            np.lib.format.write_array(arr, np.ascontiguousarray(params.tensors[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", _ZIP_DATE), arr.getvalue())
    from .io import atomic_write_bytes

    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path, expect=None):
    """Read a checkpoint; with ``expect`` (a :class:`ModelConfig`) reject shape-relevant mismatches."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise DataError(f"not a checkpoint: {exc}", str(path)) from exc
    with zf:
        header = json.loads(zf.read("header.json"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {header.get('version')}", str(path))
        cfg = ModelConfig.from_dict(header["config"])
        tensors = {}
        for name in header["tensors"]:
            with zf.open(f"{name}.npy") as fh:
                tensors[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    if expect is not None:
        mismatched = [
            k for k in ("hops", "beta", "tau", "hidden", "gcn_layers", "gcn_hidden", "embedding_dim",
                        "predictor", "predictor_hidden", "use_gcn", "f_edge", "f_node", "g_phi")
            if getattr(cfg, k) != getattr(expect, k)
        ]
        if mismatched:
            raise DataError(f"checkpoint config differs in {', '.join(mismatched)}", str(path))
    params = NeoModelParams(cfg, int(header["num_nodes"]), header["feature_dim"], tensors)
    return params, header.get("extra", {})
