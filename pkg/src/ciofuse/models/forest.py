"""Bagged variance-reduction regression trees."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tree:
    """Flat array form of a fitted tree. Leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            r, nd = rows[inner], node[inner]
            go_left = X[r, f[inner]] <= self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]


def _best_split(x, y, w, min_leaf):
    """Best threshold on one feature, or None. Returns (gain, threshold)."""
    order = np.argsort(x, kind="stable")
    xs, ys, ws = x[order], y[order], w[order]
    n = xs.shape[0]
    cw = np.cumsum(ws)
    cy = np.cumsum(ws * ys)
    tw, ty = cw[-1], cy[-1]
    # candidate split after position i (left = 0..i)
    i = np.arange(min_leaf - 1, n - min_leaf)
    if i.size == 0:
        return None
    i = i[xs[i] < xs[i + 1]]
    if i.size == 0:
        return None
    lw, ly = cw[i], cy[i]
    rw, ry = tw - lw, ty - ly
    # SSE reduction up to a constant: sum of (weighted sum)^2 / weight per side
    score = ly**2 / lw + ry**2 / rw - ty**2 / tw
    k = int(np.argmax(score))
    return float(score[k]), 0.5 * (xs[i[k]] + xs[i[k] + 1])


def grow_tree(X, y, w, max_depth, min_leaf, mtry, rng) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []
    p = X.shape[1]

    def new_node(idx):
        k = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        yi, wi = y[idx], w[idx]
        # centered form is exact for constant leaves
        value.append(float(yi[0] + wi @ (yi - yi[0]) / wi.sum()))
        return k

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        k, idx, depth = stack.pop()
        if depth >= max_depth or idx.size < 2 * min_leaf:
            continue
        yi = y[idx]
        if np.all(yi == yi[0]):
            continue
        best = None
        perm = rng.permutation(p)
        # keep drawing features past mtry until some valid split is found
        for j, f in enumerate(perm):
            if j >= mtry and best is not None:
                break
            res = _best_split(X[idx, f], yi, w[idx], min_leaf)
            if res is not None and (best is None or res[0] > best[0]):
                best = (res[0], f, res[1])
        if best is None or best[0] <= 0:
            continue
        _, f, thr = best
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[k], threshold[k] = int(f), thr
        left[k] = new_node(li)
        right[k] = new_node(ri)
        stack.append((right[k], ri, depth + 1))
        stack.append((left[k], li, depth + 1))
    return Tree(
        np.array(feature, dtype=np.intp),
        np.array(threshold),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(value),
    )


def fit_forest(X, y, sample_weight, n_trees, max_depth, min_leaf, mtry, rng, bootstrap=True):
    n = X.shape[0]
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    trees = []
    for _ in range(n_trees):
        if bootstrap:
            idx = rng.integers(0, n, size=n)
            Xb, yb, wb = X[idx], y[idx], w[idx]
        else:
            Xb, yb, wb = X, y, w
        trees.append(grow_tree(Xb, yb, wb, max_depth, min_leaf, mtry, rng))
    return tuple(trees)


def predict_forest(trees, X):
    out = np.zeros(X.shape[0])
    for tree in trees:
        out += tree.predict(X)
    return out / len(trees)
