"""CART trees (Gini or squared-error impurity) stored as flat node arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

GAIN_EPS = 1e-12


@njit(cache=True, nogil=True)
def _gini(counts, n):
    s = 0.0
    for c in counts:
        s += (c / n) ** 2
    return 1.0 - s


@njit(cache=True, nogil=True)
def _best_split(X, y_cls, y_reg, idx, features, min_leaf, n_classes, classify):
    """Best (feature, threshold, decrease, parent impurity) over candidate features.

    Scans features in the given (ascending) order and thresholds ascending;
    a later candidate replaces the incumbent only if strictly better by
    GAIN_EPS, which realises the (lower feature, lower threshold) tie-break.
    """
    n = idx.shape[0]
    best_f = -1
    best_thr = 0.0
    best_gain = -1.0

    if classify:
        total = np.zeros(n_classes)
        for i in range(n):
            total[y_cls[idx[i]]] += 1.0
        parent = _gini(total, n)
    else:
        s = 0.0
        s2 = 0.0
        for i in range(n):
            v = y_reg[idx[i]]
            s += v
            s2 += v * v
        parent = max(s2 / n - (s / n) ** 2, 0.0)

    left = np.zeros(n_classes)
    vals = np.empty(n)
    for f in features:
        for i in range(n):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals, kind="mergesort")
        if classify:
            left[:] = 0.0
        ls = 0.0
        ls2 = 0.0
        for pos in range(n - 1):
            r = idx[order[pos]]
            if classify:
                left[y_cls[r]] += 1.0
            else:
                v = y_reg[r]
                ls += v
                ls2 += v * v
            nl = pos + 1
            nr = n - nl
            a = vals[order[pos]]
            b = vals[order[pos + 1]]
            if a == b or nl < min_leaf or nr < min_leaf:
                continue
            if classify:
                gl = _gini(left, nl)
                gr = _gini(total - left, nr)
            else:
                gl = max(ls2 / nl - (ls / nl) ** 2, 0.0)
                rs = s - ls
                rs2 = s2 - ls2
                gr = max(rs2 / nr - (rs / nr) ** 2, 0.0)
            gain = parent - (nl * gl + nr * gr) / n
            if gain > best_gain + GAIN_EPS:
                best_gain = gain
                best_f = f
                thr = (a + b) / 2.0
                best_thr = thr if thr < b else a
    return best_f, best_thr, max(best_gain, 0.0), parent


@dataclass
class TreeNode:
    feature: int
    threshold: float
    value: np.ndarray
    p: float
    impurity_decrease: float
    left: int
    right: int

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


@dataclass
class Tree:
    """Flat arrays indexed by node id; node 0 is the root, leaves have feature -1."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    impurity_decrease: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def weight(self) -> np.ndarray:
        """p(t): share of the tree's training sample reaching each node."""
        return self.n_samples / self.n_samples[0]

    def node(self, i: int) -> TreeNode:
        return TreeNode(int(self.feature[i]), float(self.threshold[i]), self.value[i],
                        float(self.weight[i]), float(self.impurity_decrease[i]),
                        int(self.left[i]), int(self.right[i]))

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                return node
            r = rows[internal]
            nd = node[internal]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def feature_importance(self, n_features: int) -> np.ndarray:
        """Sum of p(t) * decrease over nodes split on each feature."""
        imp = np.zeros(n_features)
        internal = self.feature >= 0
        np.add.at(imp, self.feature[internal], (self.weight * self.impurity_decrease)[internal])
        return imp


def fit_tree(X: np.ndarray, y_cls: np.ndarray, y_reg: np.ndarray, sample: np.ndarray,
             n_classes: int, classify: bool, max_depth: int | None, max_features: int,
             min_samples_leaf: int, rng: np.random.Generator) -> Tree:
    """Grow one tree on rows ``sample`` (may repeat, e.g. a bootstrap draw)."""
    d = X.shape[1]
    feat, thr, lefts, rights, vals, ns, imps, decs = [], [], [], [], [], [], [], []
    stack = [(np.asarray(sample, dtype=np.int64), 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node_id = len(feat)
        if parent >= 0:
            (lefts if is_left else rights)[parent] = node_id
        if classify:
            counts = np.bincount(y_cls[idx], minlength=n_classes).astype(float)
            vals.append(counts / idx.size)
        else:
            vals.append(np.array([y_reg[idx].mean()]))
        feat.append(-1)
        thr.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        ns.append(idx.size)
        decs.append(0.0)

        can_split = (idx.size >= 2 * min_samples_leaf
                     and (max_depth is None or depth < max_depth))
        if max_features < d:
            cand = np.sort(rng.choice(d, size=max_features, replace=False)).astype(np.int64)
        else:
            cand = np.arange(d, dtype=np.int64)
        f, t, gain, parent_imp = _best_split(X, y_cls, y_reg, idx, cand, min_samples_leaf,
                                             n_classes, classify)
        imps.append(parent_imp)
        if not can_split or parent_imp <= GAIN_EPS or f < 0:
            continue
        mask = X[idx, f] <= t
        feat[node_id] = int(f)
        thr[node_id] = float(t)
        decs[node_id] = float(gain)
        # push right first so the left subtree gets the next ids
        stack.append((idx[~mask], depth + 1, node_id, False))
        stack.append((idx[mask], depth + 1, node_id, True))
    return Tree(np.asarray(feat, dtype=np.int64), np.asarray(thr), np.asarray(lefts, dtype=np.int64),
                np.asarray(rights, dtype=np.int64), np.vstack(vals), np.asarray(ns, dtype=float),
                np.asarray(imps), np.asarray(decs))


def gini_impurity(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    _, counts = np.unique(labels, return_counts=True)
    return float(_gini(counts.astype(float), float(labels.size)))
