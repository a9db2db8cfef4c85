"""Extremely randomised regression trees.

Each node draws ``k`` candidate features among those that are not constant
in the node, one uniform cut per feature inside the node's range, and keeps
the cut with the largest variance reduction. Nodes with fewer than ``n_min``
samples, constant targets or only constant features become leaves.

Trees are stored flat: ``feature[i] < 0`` marks a leaf whose prediction is
``value[i]``; otherwise samples with ``x[feature] < threshold`` go left.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class TreeParams:
    n_trees: int = 25
    k: int | None = None      # candidate features per node; None means all
    n_min: int = 5

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_min < 2:
            raise ValueError("n_min must be >= 2")


@numba.njit(cache=True)
def _grow(x, y, k, n_min, seed):
    np.random.seed(seed)
    n, p = x.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    idx = np.arange(n)
    # stack of (node, start, end)
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    top = 0
    st_node[0], st_lo[0], st_hi[0] = 0, 0, n
    top = 1
    n_nodes = 1
    lo_f = np.empty(p)
    hi_f = np.empty(p)
    cand = np.empty(p, np.int64)
    while top > 0:
        top -= 1
        node, lo, hi = st_node[top], st_lo[top], st_hi[top]
        m = hi - lo
        s = 0.0
        for j in range(lo, hi):
            s += y[idx[j]]
        value[node] = s / m
        if m < n_min:
            continue
        y0 = y[idx[lo]]
        const_y = True
        for j in range(lo + 1, hi):
            if y[idx[j]] != y0:
                const_y = False
                break
        if const_y:
            continue
        n_cand = 0
        for f in range(p):
            a = x[idx[lo], f]
            b = a
            for j in range(lo + 1, hi):
                v = x[idx[j], f]
                if v < a:
                    a = v
                elif v > b:
                    b = v
            lo_f[f] = a
            hi_f[f] = b
            if b > a:
                cand[n_cand] = f
                n_cand += 1
        if n_cand == 0:
            continue
        kk = min(k, n_cand)
        # partial Fisher-Yates picks kk features uniformly without replacement
        for i in range(kk):
            r = i + np.random.randint(n_cand - i)
            t = cand[i]
            cand[i] = cand[r]
            cand[r] = t
        best_score = -np.inf
        best_f = -1
        best_t = 0.0
        for i in range(kk):
            f = cand[i]
            t = lo_f[f] + np.random.random() * (hi_f[f] - lo_f[f])
            if t <= lo_f[f]:
                t = 0.5 * (lo_f[f] + hi_f[f])
            sl = 0.0
            nl = 0
            for j in range(lo, hi):
                if x[idx[j], f] < t:
                    sl += y[idx[j]]
                    nl += 1
            nr = m - nl
            if nl == 0 or nr == 0:
                continue
            sr = s - sl
            score = sl * sl / nl + sr * sr / nr
            if (score > best_score or (score == best_score and
                                       (f < best_f or (f == best_f and t < best_t)))):
                best_score = score
                best_f = f
                best_t = t
        if best_f < 0:
            continue
        # partition idx[lo:hi] in place
        i, j = lo, hi - 1
        while i <= j:
            if x[idx[i], best_f] < best_t:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top], st_lo[top], st_hi[top] = n_nodes + 1, i, hi
        top += 1
        st_node[top], st_lo[top], st_hi[top] = n_nodes, lo, i
        top += 1
        n_nodes += 2
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@numba.njit(cache=True)
def _predict(x, roots, feature, threshold, left, right, value):
    n = x.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for r in roots:
            node = r
            while feature[node] >= 0:
                if x[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc / roots.shape[0]
    return out


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Flat storage of several trees; ``roots`` holds each tree's first node."""

    n_features: int
    roots: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_trees(self) -> int:
        return int(self.roots.shape[0])

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.n_features:
            raise ValueError(f"dimension mismatch: {x.shape[1]} != {self.n_features}")
        out = _predict(np.ascontiguousarray(x), self.roots, self.feature, self.threshold,
                       self.left, self.right, self.value)
        return out[0] if single else out

    def to_arrays(self) -> dict:
        return {"n_features": np.array(self.n_features), "roots": self.roots,
                "feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}

    @classmethod
    def from_arrays(cls, d: dict) -> "Ensemble":
        return cls(int(np.asarray(d["n_features"]).reshape(-1)[0]), *(np.asarray(d[k]) for k in
                   ("roots", "feature", "threshold", "left", "right", "value")))


def _pack(trees, p) -> Ensemble:
    roots, parts, off = [], [], 0
    for f, t, l, r, v in trees:
        roots.append(off)
        shift = np.where(l >= 0, off, 0)
        parts.append((f, t, l + shift, r + shift, v))
        off += f.shape[0]
    cols = list(zip(*parts))
    return Ensemble(p, np.array(roots, np.int64), *(np.concatenate(c) for c in cols))


def concat(a: Ensemble, b: Ensemble) -> Ensemble:
    """One ensemble holding the trees of both inputs."""
    if a.n_features != b.n_features:
        raise ValueError("feature dimension mismatch")
    off = a.feature.shape[0]
    shift = lambda arr: np.where(arr >= 0, arr + off, arr)
    return Ensemble(a.n_features, np.concatenate([a.roots, b.roots + off]),
                    np.concatenate([a.feature, b.feature]),
                    np.concatenate([a.threshold, b.threshold]),
                    np.concatenate([a.left, shift(b.left)]),
                    np.concatenate([a.right, shift(b.right)]),
                    np.concatenate([a.value, b.value]))


def tree_seeds(seed: int, n: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32).astype(np.int64)


def fit(x, y, params: TreeParams = TreeParams(), seed: int = 0) -> Ensemble:
    x = np.ascontiguousarray(np.asarray(x, dtype=float))
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    if x.ndim != 2:
        raise ValueError("x must be a 2-d array")
    n, p = x.shape
    if n == 0:
        raise ValueError("zero samples")
    if p == 0:
        raise ValueError("no features")
    if y.shape != (n,):
        raise ValueError("y must have one target per row")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    k = p if params.k is None else min(params.k, p)
    trees = [_grow(x, y, k, params.n_min, int(s)) for s in tree_seeds(seed, params.n_trees)]
    return _pack(trees, p)


def constant(value: float, n_features: int, n_trees: int = 1) -> Ensemble:
    """Ensemble of single-leaf trees predicting ``value``."""
    z = np.full(n_trees, -1, np.int64)
    return Ensemble(n_features, np.arange(n_trees, dtype=np.int64), z.copy(),
                    np.zeros(n_trees), z.copy(), z.copy(), np.full(n_trees, float(value)))
