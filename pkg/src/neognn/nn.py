"""Two-layer perceptrons and frozen analytic maps with hand-written backward passes.

Parameters live outside the modules, in flat ``{name: ndarray}`` dicts, so
that an optimizer can treat the whole model as one mapping.  A module only
knows its parameter-name prefix.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "softplus")


def _softplus(x):
    return np.logaddexp(0.0, x)


class Mlp:
    """``out_act(W2 . hidden_act(W1 x + b1) + b2)`` applied row-wise to ``(n, in)`` input."""

    def __init__(self, prefix, in_dim, hidden, out_dim=1, hidden_act="relu", out_act="identity"):
        if min(in_dim, hidden, out_dim) < 1:
            raise ValueError(f"{prefix}: layer widths must be positive, got {(in_dim, hidden, out_dim)}")
        if hidden_act not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {hidden_act!r}")
        if out_act not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {out_act!r}")
        self.prefix = prefix
        self.dims = (in_dim, hidden, out_dim)
        self.hidden_act = hidden_act
        self.out_act = out_act

    def names(self):
        return [f"{self.prefix}.{k}" for k in ("w1", "b1", "w2", "b2")]

    def init(self, rng, out_scale=1.0):
        """Glorot-uniform weights and zero biases."""
        i, h, o = self.dims
        lim1 = np.sqrt(6.0 / (i + h))
        lim2 = np.sqrt(6.0 / (h + o)) * out_scale
        return {
            f"{self.prefix}.w1": rng.uniform(-lim1, lim1, size=(i, h)),
            f"{self.prefix}.b1": np.zeros(h),
            f"{self.prefix}.w2": rng.uniform(-lim2, lim2, size=(h, o)),
            f"{self.prefix}.b2": np.zeros(o),
        }

    def forward(self, params, x):
        p = self.prefix
        pre1 = x @ params[f"{p}.w1"] + params[f"{p}.b1"]
        if self.hidden_act == "relu":
            hid = np.maximum(pre1, 0.0)
        else:
            hid = np.tanh(pre1)
        pre2 = hid @ params[f"{p}.w2"] + params[f"{p}.b2"]
        out = _softplus(pre2) if self.out_act == "softplus" else pre2
        return out, (x, pre1, hid, pre2)

    def backward(self, params, cache, g_out):
        """Return ``(grad wrt input, {param name: grad})``."""
        p = self.prefix
        x, pre1, hid, pre2 = cache
        g_pre2 = g_out * expit(pre2) if self.out_act == "softplus" else g_out
        grads = {
            f"{p}.w2": hid.T @ g_pre2,
            f"{p}.b2": g_pre2.sum(axis=0),
        }
        g_hid = g_pre2 @ params[f"{p}.w2"].T
        if self.hidden_act == "relu":
            g_pre1 = g_hid * (pre1 > 0.0)
        else:
            g_pre1 = g_hid * (1.0 - hid * hid)
        grads[f"{p}.w1"] = x.T @ g_pre1
        grads[f"{p}.b1"] = g_pre1.sum(axis=0)
        return g_pre1 @ params[f"{p}.w1"].T, grads


def _safe_log(x):
    return np.log(np.where(x > 1.0, x, 2.0))


class Analytic:
    """Parameter-free scalar map used for frozen (heuristic-reproducing) modes.

    The log-based maps return 0 for inputs ``<= 1`` so that nodes of degree
    at most one contribute nothing, mirroring the Adamic-Adar skip rule.
    """

    KINDS = ("identity", "one", "reciprocal", "reciprocal_sqrt", "reciprocal_log", "reciprocal_sqrt_log")

    def __init__(self, kind):
        if kind not in self.KINDS:
            raise ValueError(f"unknown analytic map {kind!r}")
        self.kind = kind
        self.prefix = kind

    def names(self):
        return []

    def init(self, rng, out_scale=1.0):
        return {}

    def forward(self, params, x):
        k = self.kind
        if k == "identity":
            out = x.copy()
        elif k == "one":
            out = np.ones_like(x)
        elif k == "reciprocal":
            out = np.divide(1.0, x, out=np.zeros_like(x), where=x > 0)
        elif k == "reciprocal_sqrt":
            out = np.divide(1.0, np.sqrt(np.maximum(x, 0.0)), out=np.zeros_like(x), where=x > 0)
        elif k == "reciprocal_log":
            out = np.where(x > 1.0, 1.0 / _safe_log(x), 0.0)
        else:
            out = np.where(x > 1.0, 1.0 / np.sqrt(_safe_log(x)), 0.0)
        return out, x

    def backward(self, params, cache, g_out):
        x = cache
        k = self.kind
        if k == "identity":
            d = np.ones_like(x)
        elif k == "one":
            d = np.zeros_like(x)
        elif k == "reciprocal":
            d = np.divide(-1.0, x * x, out=np.zeros_like(x), where=x > 0)
        elif k == "reciprocal_sqrt":
            d = np.divide(-0.5, x * np.sqrt(np.maximum(x, 0.0)), out=np.zeros_like(x), where=x > 0)
        elif k == "reciprocal_log":
            lg = _safe_log(x)
            d = np.where(x > 1.0, -1.0 / (x * lg * lg), 0.0)
        else:
            lg = _safe_log(x)
            d = np.where(x > 1.0, -0.5 / (x * lg**1.5), 0.0)
        return g_out * d, {}


def make_scalar_map(prefix, kind, hidden, hidden_act="relu", out_act="identity"):
    if kind == "mlp":
        return Mlp(prefix, 1, hidden, 1, hidden_act, out_act)
    return Analytic(kind)
