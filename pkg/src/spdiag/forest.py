"""Random forest (bagged CART) compiled with numba.

Follows the conventions of Breiman & Cutler's reference code: bootstrap
samples of size n, ``mtry`` candidate features drawn afresh at each node,
exhaustive midpoint splits, variance reduction for regression and Gini for
classification. A node is not split when it holds ``nodesize`` or fewer
samples, when it is pure, or when none of the sampled features separates it.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_LEAF = -1


@njit(cache=True)
def _best_split(X, y, cls, is_clf, n_classes, samples, start, end, feats):
    count = end - start
    best_feat = -1
    best_thr = 0.0
    best_crit = -1.0
    tot = np.zeros(n_classes)
    total = 0.0
    left_sum = 0.0
    if is_clf:
        for s in range(start, end):
            tot[cls[samples[s]]] += 1.0
        parent = 0.0
        for c in range(n_classes):
            parent += tot[c] * tot[c]
        parent /= count
    else:
        for s in range(start, end):
            total += y[samples[s]]
        parent = total * total / count

    vals = np.empty(count)
    left_cnt = np.zeros(n_classes)
    for f in feats:
        for s in range(count):
            vals[s] = X[samples[start + s], f]
        order = np.argsort(vals)
        if vals[order[0]] == vals[order[count - 1]]:
            continue
        if is_clf:
            for c in range(n_classes):
                left_cnt[c] = 0.0
        else:
            left_sum = 0.0
        for k in range(count - 1):
            idx = samples[start + order[k]]
            if is_clf:
                left_cnt[cls[idx]] += 1.0
            else:
                left_sum += y[idx]
            v, v_next = vals[order[k]], vals[order[k + 1]]
            if v == v_next:
                continue
            nl = k + 1.0
            nr = count - nl
            if is_clf:
                gl = 0.0
                gr = 0.0
                for c in range(n_classes):
                    gl += left_cnt[c] * left_cnt[c]
                    rc = tot[c] - left_cnt[c]
                    gr += rc * rc
                crit = gl / nl + gr / nr
            else:
                crit = left_sum * left_sum / nl + (total - left_sum) ** 2 / nr
            if crit > best_crit:
                best_crit = crit
                best_feat = f
                best_thr = 0.5 * (v + v_next)
    if best_feat < 0 or best_crit <= parent * (1.0 + 1e-12):
        return -1, 0.0
    return best_feat, best_thr


@njit(cache=True)
def _grow_forest(X, y, cls, is_clf, n_classes, n_trees, mtry, nodesize, seed):
    np.random.seed(seed)
    n, p = X.shape
    max_nodes = 2 * n + 1
    feature = np.full((n_trees, max_nodes), _LEAF, dtype=np.int32)
    threshold = np.zeros((n_trees, max_nodes))
    left = np.full((n_trees, max_nodes), -1, dtype=np.int32)
    right = np.full((n_trees, max_nodes), -1, dtype=np.int32)
    value = np.zeros((n_trees, max_nodes))
    inbag = np.zeros((n_trees, n), dtype=np.int32)

    samples = np.empty(n, dtype=np.int64)
    tmp = np.empty(n, dtype=np.int64)
    feat_pool = np.arange(p)
    feats = np.empty(mtry, dtype=np.int64)
    stack_node = np.empty(max_nodes, dtype=np.int64)
    stack_start = np.empty(max_nodes, dtype=np.int64)
    stack_end = np.empty(max_nodes, dtype=np.int64)
    counts = np.zeros(n_classes)

    for t in range(n_trees):
        for s in range(n):
            samples[s] = np.random.randint(0, n)
            inbag[t, samples[s]] += 1
        n_nodes = 1
        top = 0
        stack_node[0] = 0
        stack_start[0] = 0
        stack_end[0] = n
        while top >= 0:
            node = stack_node[top]
            start = stack_start[top]
            end = stack_end[top]
            top -= 1
            count = end - start
            # node value
            pure = True
            if is_clf:
                for c in range(n_classes):
                    counts[c] = 0.0
                for s in range(start, end):
                    counts[cls[samples[s]]] += 1.0
                best_c = 0
                for c in range(1, n_classes):
                    if counts[c] > counts[best_c]:
                        best_c = c
                value[t, node] = best_c
                pure = counts[best_c] == count
            else:
                acc = 0.0
                for s in range(start, end):
                    acc += y[samples[s]]
                value[t, node] = acc / count
                first = y[samples[start]]
                for s in range(start + 1, end):
                    if y[samples[s]] != first:
                        pure = False
                        break
            if pure or count <= nodesize:
                continue
            # sample mtry features without replacement
            for j in range(mtry):
                r = j + np.random.randint(0, p - j)
                feat_pool[j], feat_pool[r] = feat_pool[r], feat_pool[j]
                feats[j] = feat_pool[j]
            f, thr = _best_split(X, y, cls, is_clf, n_classes, samples, start, end, feats)
            if f < 0:
                continue
            # partition samples[start:end]
            lo = start
            hi = end - 1
            for s in range(start, end):
                if X[samples[s], f] <= thr:
                    tmp[lo] = samples[s]
                    lo += 1
                else:
                    tmp[hi] = samples[s]
                    hi -= 1
            for s in range(start, end):
                samples[s] = tmp[s]
            feature[t, node] = f
            threshold[t, node] = thr
            left[t, node] = n_nodes
            right[t, node] = n_nodes + 1
            top += 1
            stack_node[top] = n_nodes
            stack_start[top] = start
            stack_end[top] = lo
            top += 1
            stack_node[top] = n_nodes + 1
            stack_start[top] = lo
            stack_end[top] = end
            n_nodes += 2
    return feature, threshold, left, right, value, inbag


@njit(cache=True)
def _apply_trees(X, feature, threshold, left, right, value):
    """Leaf value of every tree for every row, shape (m, n_trees)."""
    m = X.shape[0]
    n_trees = feature.shape[0]
    out = np.empty((m, n_trees))
    for i in range(m):
        for t in range(n_trees):
            node = 0
            while feature[t, node] != _LEAF:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[i, t] = value[t, node]
    return out


class RandomForest:
    """Bagged CART ensemble for regression or classification.

    ``mtry`` and ``nodesize`` default to max(1, floor(p/3)) and 5 for
    regression, floor(sqrt(p)) and 1 for classification.
    """

    def __init__(self, n_trees=500, mtry=None, nodesize=None, classification=False, seed=0):
        self.n_trees = n_trees
        self.mtry = mtry
        self.nodesize = nodesize
        self.classification = classification
        self.seed = seed

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        n, p = X.shape
        if self.classification:
            self.classes_, cls = np.unique(y, return_inverse=True)
            cls = cls.astype(np.int64)
            yr = np.zeros(n)
            mtry = self.mtry or max(1, int(math.floor(math.sqrt(p))))
            nodesize = 1 if self.nodesize is None else self.nodesize
        else:
            self.classes_ = None
            cls = np.zeros(n, dtype=np.int64)
            yr = np.asarray(y, dtype=np.float64)
            mtry = self.mtry or max(1, p // 3)
            nodesize = 5 if self.nodesize is None else self.nodesize
        self.mtry_ = min(int(mtry), p)
        self.nodesize_ = int(nodesize)
        n_classes = 1 if self.classes_ is None else len(self.classes_)
        seed = int(self.seed) % (2**31 - 1)
        (self.feature_, self.threshold_, self.left_, self.right_,
         self.value_, self.inbag_) = _grow_forest(
            X, yr, cls, self.classification, n_classes, int(self.n_trees),
            self.mtry_, self.nodesize_, seed,
        )
        return self

    def tree_predictions(self, X):
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        return _apply_trees(X, self.feature_, self.threshold_, self.left_, self.right_, self.value_)

    def predict(self, X):
        leaves = self.tree_predictions(X)
        if not self.classification:
            return leaves.mean(axis=1)
        votes = np.zeros((leaves.shape[0], len(self.classes_)))
        for c in range(len(self.classes_)):
            votes[:, c] = (leaves == c).sum(axis=1)
        return self.classes_[np.argmax(votes, axis=1)]

    @property
    def n_nodes(self) -> int:
        return int((self.left_ >= 0).sum() * 2 + self.n_trees)
