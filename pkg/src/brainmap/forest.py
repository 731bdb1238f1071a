"""Random forest of Gini CART trees with bootstrap rows and per-split
feature subsampling; prediction is a majority vote over trees.

The tree builder is compiled with numba. Tree ``t`` of a forest draws its
bootstrap sample and feature subsets from a seed derived from
``(seed, stream path, t)`` only, so forests are reproducible regardless of
the order in which trees are grown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ContractError, ShapeError
from .numerics.rng import RngStream


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 2
    features_per_split: str | int = "sqrt"

    def n_split_features(self, d: int) -> int:
        f = self.features_per_split
        if f == "sqrt":
            return max(1, int(math.isqrt(d)))
        if f == "all":
            return d
        f = int(f)
        if f < 1:
            raise ContractError("features_per_split must be >= 1")
        return min(f, d)


@numba.njit(cache=True)
def _gini(counts, total):
    if total == 0:
        return 0.0
    acc = 0.0
    for c in range(counts.shape[0]):
        p = counts[c] / total
        acc += p * p
    return 1.0 - acc


@numba.njit(cache=True)
def _grow_tree(x, y, n_classes, seed, max_depth, min_leaf, n_feat, max_nodes,
               feature, threshold, left, right, leaf_class, bootstrap):
    np.random.seed(seed)
    n, d = x.shape
    rows = np.empty(n, dtype=np.int64)
    if bootstrap:
        for i in range(n):
            rows[i] = np.random.randint(0, n)
    else:
        for i in range(n):
            rows[i] = i

    # explicit stack of (node id, start, stop, depth) over the rows buffer
    st_node = np.empty(max_nodes, dtype=np.int64)
    st_start = np.empty(max_nodes, dtype=np.int64)
    st_stop = np.empty(max_nodes, dtype=np.int64)
    st_depth = np.empty(max_nodes, dtype=np.int64)
    top = 0
    st_node[0], st_start[0], st_stop[0], st_depth[0] = 0, 0, n, 0
    top = 1
    n_nodes = 1
    perm = np.arange(d)
    counts = np.zeros(n_classes, dtype=np.float64)
    left_counts = np.zeros(n_classes, dtype=np.float64)
    vals = np.empty(n, dtype=np.float64)

    while top > 0:
        top -= 1
        node, start, stop, depth = st_node[top], st_start[top], st_stop[top], st_depth[top]
        m = stop - start
        counts[:] = 0.0
        for i in range(start, stop):
            counts[y[rows[i]]] += 1.0
        best_c = 0
        for c in range(n_classes):
            if counts[c] > counts[best_c]:
                best_c = c
        leaf_class[node] = best_c
        feature[node] = -1
        parent_imp = _gini(counts, m)
        if depth >= max_depth or m < 2 * min_leaf or parent_imp <= 0.0 or n_nodes + 2 > max_nodes:
            continue

        # partial Fisher-Yates draws n_feat distinct features
        for i in range(n_feat):
            j = i + np.random.randint(0, d - i)
            perm[i], perm[j] = perm[j], perm[i]
        best_score = np.inf
        best_f = -1
        best_thr = 0.0
        for fi in range(n_feat):
            f = perm[fi]
            for i in range(m):
                vals[i] = x[rows[start + i], f]
            order = np.argsort(vals[:m])
            left_counts[:] = 0.0
            for k in range(m - 1):
                r = rows[start + order[k]]
                left_counts[y[r]] += 1.0
                nl = k + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                v0 = vals[order[k]]
                v1 = vals[order[k + 1]]
                if v1 <= v0:
                    continue
                gl = _gini(left_counts, nl)
                gr = 0.0
                acc = 0.0
                for c in range(n_classes):
                    p = (counts[c] - left_counts[c]) / nr
                    acc += p * p
                gr = 1.0 - acc
                score = (nl * gl + nr * gr) / m
                if score < best_score:
                    best_score = score
                    best_f = f
                    best_thr = 0.5 * (v0 + v1)
                    if best_thr >= v1:
                        best_thr = v0
        if best_f < 0:
            continue

        # partition rows[start:stop] around the threshold
        i, j = start, stop - 1
        while i <= j:
            if x[rows[i], best_f] <= best_thr:
                i += 1
            else:
                rows[i], rows[j] = rows[j], rows[i]
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        lnode, rnode = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = lnode, rnode
        st_node[top], st_start[top], st_stop[top], st_depth[top] = rnode, i, stop, depth + 1
        top += 1
        st_node[top], st_start[top], st_stop[top], st_depth[top] = lnode, start, i, depth + 1
        top += 1
    return n_nodes


@numba.njit(cache=True)
def _vote(x, feature, threshold, left, right, leaf_class, n_classes):
    n_trees = feature.shape[0]
    out = np.zeros((x.shape[0], n_classes), dtype=np.int64)
    for s in range(x.shape[0]):
        for t in range(n_trees):
            node = 0
            while feature[t, node] >= 0:
                if x[s, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[s, leaf_class[t, node]] += 1
    return out


class RandomForest:
    def __init__(self, config: ForestConfig | None = None, seed: int = 0):
        self.config = config or ForestConfig()
        self.seed = seed
        self.classes_ = None
        self.constant_ = None
        self.tree_sizes = None

    @property
    def n_trees(self) -> int:
        return 0 if self.tree_sizes is None else len(self.tree_sizes)

    def fit(self, x, y, stream: RngStream | None = None, bootstrap: bool = True) -> "RandomForest":
        x = np.ascontiguousarray(x, dtype=np.float64)
        y = np.asarray(y)
        if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
            raise ShapeError(f"features {x.shape} do not match labels {y.shape}")
        stream = stream or RngStream(self.seed)
        self.classes_, codes = np.unique(y, return_inverse=True)
        self.constant_ = None
        if len(self.classes_) == 1:
            # single-class training data: a constant classifier
            self.constant_ = self.classes_[0]
            self.tree_sizes = np.zeros(0, dtype=np.int64)
            return self
        cfg = self.config
        n, d = x.shape
        max_nodes = int(min(2 ** (cfg.max_depth + 1) - 1, 2 * n - 1))
        shape = (cfg.n_trees, max_nodes)
        self.feature = np.full(shape, -1, dtype=np.int64)
        self.threshold = np.zeros(shape)
        self.left = np.zeros(shape, dtype=np.int64)
        self.right = np.zeros(shape, dtype=np.int64)
        self.leaf_class = np.zeros(shape, dtype=np.int64)
        self.tree_sizes = np.zeros(cfg.n_trees, dtype=np.int64)
        codes = codes.astype(np.int64)
        n_feat = cfg.n_split_features(d)
        for t in range(cfg.n_trees):
            tree_seed = int(np.random.SeedSequence(
                entropy=stream.seed & (2**64 - 1), spawn_key=stream.stream_id + (t,)
            ).generate_state(1)[0])
            self.tree_sizes[t] = _grow_tree(
                x, codes, len(self.classes_), tree_seed, cfg.max_depth, cfg.min_leaf, n_feat,
                max_nodes, self.feature[t], self.threshold[t], self.left[t], self.right[t],
                self.leaf_class[t], bootstrap)
        return self

    def votes(self, x) -> np.ndarray:
        """Per-class vote counts over ``classes_``, shape (n_samples, n_classes_seen)."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if self.constant_ is not None:
            out = np.zeros((x.shape[0], 1), dtype=np.int64)
            out[:, 0] = 1
            return out
        return _vote(x, self.feature, self.threshold, self.left, self.right,
                     self.leaf_class, len(self.classes_))

    def predict(self, x) -> np.ndarray:
        # ties go to the lowest class label
        return self.classes_[np.argmax(self.votes(x), axis=1)]


def rf_fit(features, labels, config: ForestConfig | None = None, seed: int = 0,
           stream: RngStream | None = None, bootstrap: bool = True) -> RandomForest:
    return RandomForest(config, seed).fit(features, labels, stream, bootstrap)


def rf_predict(model: RandomForest, features) -> np.ndarray:
    return model.predict(features)
