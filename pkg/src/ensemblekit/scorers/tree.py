"""CART classification trees (Gini impurity) and random forests."""

import math

import numpy as np

from ..core import Classifier, ParamSet
from ..rng import derive_seed, numpy_rng

TIE_EPS = 1e-12
MAX_FEATURES = ("auto", "sqrt", "log2")


def n_split_features(max_features, m):
    """Candidate features per split; ``auto`` means ``sqrt`` for classifiers."""
    if max_features is None:
        return m
    if max_features in ("auto", "sqrt"):
        return max(1, int(math.sqrt(m)))
    if max_features == "log2":
        return max(1, int(math.log2(m)))
    if isinstance(max_features, int) and 1 <= max_features:
        return min(m, max_features)
    raise ValueError(f"max_features must be one of {MAX_FEATURES} or a positive int")


def best_gini_split(X, y, n_classes, features, min_samples_leaf):
    """Lowest weighted Gini split over ``features`` (ascending order).

    Returns ``(impurity, feature, threshold)`` or None. Ties keep the lower
    feature index, then the lower threshold.
    """
    n = len(y)
    best = None
    onehot = np.eye(n_classes)[y]
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        sizes = np.arange(1, n, dtype=np.float64)
        valid = (xs[1:] > xs[:-1]) & (sizes >= min_samples_leaf) & (n - sizes >= min_samples_leaf)
        if not valid.any():
            continue
        right = left[-1] + onehot[order[-1]] - left
        gl = sizes - (left**2).sum(axis=1) / sizes
        gr = (n - sizes) - (right**2).sum(axis=1) / (n - sizes)
        impurity = np.where(valid, (gl + gr) / n, np.inf)
        p = int(np.flatnonzero(impurity <= impurity.min() + TIE_EPS)[0])
        if best is None or impurity[p] < best[0] - TIE_EPS:
            best = (float(impurity[p]), int(f), float((xs[p] + xs[p + 1]) / 2.0))
    return best


class TreeModel(Classifier):
    """Binary split tree stored as flat node arrays.

    ``feature[i] == -1`` marks a leaf; samples with ``x[feature] <= threshold``
    go left.
    """

    family = "tree"

    def __init__(self, feature, threshold, left, right, counts, params=None, training_meta=None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.float64)
        self.n_classes = self.counts.shape[1]
        self.params = ParamSet(params or {})
        self.training_meta = dict(training_meta or {})

    @property
    def depth(self):
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        X = np.asarray(X)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def predict_X(self, X):
        return np.argmax(self.counts[self.apply(X)], axis=1)

    def proba_X(self, X):
        c = self.counts[self.apply(X)]
        return c / c.sum(axis=1, keepdims=True)

    def predict(self, V):
        return self.predict_X(V.vectors)

    def class_scores(self, V):
        return self.proba_X(V.vectors)

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "training_meta": self.training_meta,
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d, components=()):
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["counts"], d["params"], d["training_meta"])


def _check_tree_params(max_depth, min_samples_split, min_samples_leaf):
    if max_depth is not None and max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    if min_samples_split < 2:
        raise ValueError("min_samples_split must be >= 2")


def grow_tree(X, y, n_classes, max_depth=None, min_samples_split=2, min_samples_leaf=1,
              max_features=None, rng=None):
    """Greedy depth-first CART growth; nodes are numbered in preorder."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    m = X.shape[1]
    k = n_split_features(max_features, m)
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=n_classes).astype(np.float64))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if len(idx) < min_samples_split or (max_depth is not None and depth >= max_depth):
            continue
        if np.count_nonzero(counts[node]) <= 1:
            continue
        if k < m:
            feats = np.sort(rng.choice(m, size=k, replace=False))
        else:
            feats = np.arange(m)
        split = best_gini_split(X[idx], y[idx], n_classes, feats, min_samples_leaf)
        if split is None:
            continue
        _, f, t = split
        mask = X[idx, f] <= t
        feature[node], threshold[node] = f, t
        li = new_node(idx[mask])
        ri = new_node(idx[~mask])
        left[node], right[node] = li, ri
        # right pushed first so the left subtree is expanded first
        stack.append((ri, idx[~mask], depth + 1))
        stack.append((li, idx[mask], depth + 1))
    return feature, threshold, left, right, np.array(counts)


def train_tree(V, labels, params, n_classes=None):
    """Single CART tree on the vector view; params: max_depth, min_samples_split, min_samples_leaf."""
    params = ParamSet(params)
    y = np.asarray(labels, dtype=np.int64)
    n_classes = n_classes or int(y.max()) + 1
    max_depth = params.get("max_depth")
    mss = int(params.get("min_samples_split", 2))
    msl = int(params.get("min_samples_leaf", 1))
    _check_tree_params(max_depth, mss, msl)
    parts = grow_tree(V.vectors, y, n_classes, max_depth, mss, msl, params.get("max_features"),
                      numpy_rng(params.get("seed", 0)))
    return TreeModel(*parts, params=params)


class ForestModel(Classifier):
    family = "forest"

    def __init__(self, trees, n_classes, params=None, training_meta=None):
        self.trees = list(trees)
        self.n_classes = int(n_classes)
        self.params = ParamSet(params or {})
        self.training_meta = dict(training_meta or {})

    def votes_X(self, X):
        votes = np.zeros((len(X), self.n_classes))
        rows = np.arange(len(X))
        for tree in self.trees:
            votes[rows, tree.predict_X(X)] += 1.0
        return votes / len(self.trees)

    def class_scores(self, V):
        return self.votes_X(V.vectors)

    def predict(self, V):
        return np.argmax(self.class_scores(V), axis=1)

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "training_meta": self.training_meta,
            "n_classes": self.n_classes,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d, components=()):
        trees = [TreeModel.from_dict(t) for t in d["trees"]]
        return cls(trees, d["n_classes"], d["params"], d["training_meta"])


def train_forest(V, labels, params, n_classes=None):
    """Random forest: bootstrap columns per tree, random feature subset per split.

    params: n_estimators, max_features, max_depth, min_samples_split,
    min_samples_leaf, seed.  Tree ``t`` draws from ``derive_seed(seed, t)``.
    """
    params = ParamSet(params)
    X = V.vectors
    y = np.asarray(labels, dtype=np.int64)
    n_classes = n_classes or int(y.max()) + 1
    n_estimators = int(params["n_estimators"])
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    max_features = params.get("max_features", "auto")
    n_split_features(max_features, X.shape[1])
    max_depth = params.get("max_depth")
    mss = int(params.get("min_samples_split", 2))
    msl = int(params.get("min_samples_leaf", 1))
    _check_tree_params(max_depth, mss, msl)
    seed = int(params.get("seed", 0))
    trees = []
    for t in range(n_estimators):
        tree_seed = derive_seed(seed, t)
        rng = numpy_rng(tree_seed)
        boot = rng.integers(0, len(y), size=len(y))
        parts = grow_tree(X[boot], y[boot], n_classes, max_depth, mss, msl, max_features, rng)
        trees.append(TreeModel(*parts, training_meta={"seed": tree_seed}))
    return ForestModel(trees, n_classes, params)
