"""Computing-resource model of the VBS pool: the load-to-resource curve, the
rate cap it induces, and centralized versus per-RRH constraint checks."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class GammaModel:
    """Nondecreasing map from accumulated processed rate to consumed resource.

    kinds: identity; linear (params a, b: a*x + b with a > 0); piecewise
    (params points: [[x0, y0], [x1, y1], ...] with nondecreasing x and y).
    """

    kind: str = "identity"
    params: dict = None

    def __post_init__(self):
        self.params = dict(self.params or {})
        if self.kind == "identity":
            pass
        elif self.kind == "linear":
            a = float(self.params.get("a", 1.0))
            if a <= 0:
                raise ValueError("linear resource curve needs positive slope")
            self.params.setdefault("a", a)
            self.params.setdefault("b", 0.0)
        elif self.kind == "piecewise":
            pts = np.asarray(self.params.get("points", []), dtype=float)
            if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
                raise ValueError("piecewise curve needs at least two [x, y] points")
            if np.any(np.diff(pts[:, 0]) < 0) or np.any(np.diff(pts[:, 1]) < 0):
                raise ValueError("piecewise curve must be nondecreasing")
            self.params["points"] = pts
        else:
            raise ValueError(f"unknown resource curve kind {self.kind!r}")
        if self.evaluate(0.0) < 0:
            raise ValueError("resource curve must be nonnegative at zero load")

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            out = x
        elif self.kind == "linear":
            out = self.params["a"] * x + self.params["b"]
        else:
            pts = self.params["points"]
            out = np.interp(x, pts[:, 0], pts[:, 1])
        return float(out) if np.isscalar(x) or x.ndim == 0 else out


def omega(gm, c):
    """Rate cap induced by capacity c: sup{x : gamma(x) <= c}.

    Returns 0 when c is below the curve at zero load; flat segments resolve
    to their right edge (the sup convention).
    """
    if gm.kind == "identity":
        return max(float(c), 0.0)
    if gm.kind == "linear":
        a, b = gm.params["a"], gm.params["b"]
        return max((float(c) - b) / a, 0.0)
    pts = gm.params["points"]
    xs, ys = pts[:, 0], pts[:, 1]
    if c < ys[0]:
        return 0.0
    if c >= ys[-1]:
        return float(xs[-1])  # sup over the curve's domain
    j = int(np.searchsorted(ys, c, side="right"))  # ys[j-1] <= c < ys[j]
    x_lo, x_hi, y_lo, y_hi = xs[j - 1], xs[j], ys[j - 1], ys[j]
    if y_hi == y_lo:
        return float(x_hi)
    return float(x_lo + (x_hi - x_lo) * (c - y_lo) / (y_hi - y_lo))


def check_centralized(rates, gm, c):
    """Does gamma(sum of rates) fit the pooled capacity c?"""
    load = float(np.sum(np.maximum(rates, 0.0)))
    used = gm.evaluate(load)
    return {"satisfied": bool(used <= c), "slack": float(c - used)}


def check_distributed(rates, clusters, gm, c_r):
    """Per-RRH check of gamma(sum of served rates) <= c_r.

    A user served by k RRHs contributes its full rate at all k of them.
    """
    rates = np.asarray(rates, dtype=float)
    s = clusters.s
    c_r = np.broadcast_to(np.asarray(c_r, dtype=float), (s.shape[1],))
    out = []
    for r in range(s.shape[1]):
        load = float(np.dot(s[:, r], rates))
        used = gm.evaluate(load)
        out.append({"satisfied": bool(used <= c_r[r]), "slack": float(c_r[r] - used)})
    return out


def enforce_distributed_drop(rates, clusters, q, c_r, gm, tau):
    """Greedy per-RRH rate dropping: repeatedly shrink the smallest-weight
    contributor of the currently most violated RRH until every per-RRH
    check passes. Returns the reduced per-user rates."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    rates = np.asarray(rates, dtype=float).copy()
    q = np.asarray(q, dtype=float)
    s = clusters.s
    n_rrh = s.shape[1]
    caps = np.broadcast_to(np.asarray(c_r, dtype=float), (n_rrh,))
    limits = np.array([omega(gm, c) for c in caps])  # per-RRH load limits

    def loads():
        return s.T.astype(float) @ rates

    for _ in range(100000):  # each pass strictly reduces some rate
        ld = loads()
        over = ld - limits
        r_star = int(np.argmax(over))
        if over[r_star] <= 1e-12:
            break
        users = np.flatnonzero((s[:, r_star] == 1) & (rates > 0))
        if users.size == 0:
            break  # violated but nothing left to shrink (limit below zero)
        u = users[np.lexsort((users, q[users]))[0]]
        excess = over[r_star]
        steps = math.ceil(excess / tau - 1e-12)
        cut = min(steps * tau, rates[u])
        rates[u] -= cut
    return np.maximum(rates, 0.0)
