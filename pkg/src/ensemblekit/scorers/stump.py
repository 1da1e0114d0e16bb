import numpy as np

from ..core import Classifier

TIE_EPS = 1e-12
CONSTANT = (-1, float("inf"))


class StumpModel(Classifier):
    """Depth-1 tree: ``left_class`` if x[feature] <= threshold else ``right_class``.

    A constant stump has ``feature == -1`` and predicts ``left_class``.
    """

    family = "stump"

    def __init__(self, feature, threshold, left_class, right_class, n_classes, training_meta=None):
        self.feature = int(feature)
        self.threshold = float(threshold)
        self.left_class = int(left_class)
        self.right_class = int(right_class)
        self.n_classes = int(n_classes)
        self.training_meta = dict(training_meta or {})

    @property
    def key(self):
        return (self.feature, self.threshold)

    @property
    def weighted_error(self):
        return self.training_meta.get("weighted_error")

    def predict_X(self, X):
        X = np.asarray(X)
        if self.feature < 0:
            return np.full(len(X), self.left_class, dtype=np.int64)
        return np.where(X[:, self.feature] <= self.threshold, self.left_class, self.right_class).astype(np.int64)

    def predict(self, V):
        return self.predict_X(V.vectors)

    def class_scores(self, V):
        return np.eye(self.n_classes)[self.predict(V)]

    def to_dict(self):
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left_class": self.left_class,
            "right_class": self.right_class,
            "n_classes": self.n_classes,
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, d, components=()):
        return cls(d["feature"], d["threshold"], d["left_class"], d["right_class"], d["n_classes"], d["training_meta"])


def fit_stump(X, y, weights, n_classes, exclude=frozenset()):
    """Exhaustive weighted-error stump search.

    Candidates are the constant stump followed by every (feature, midpoint)
    split in ascending order; a later candidate wins only on strictly lower
    error, so ties keep the lowest feature and threshold.  Each side predicts
    its heaviest class (lowest index on ties).  ``exclude`` holds
    ``(feature, threshold)`` keys that may not be chosen.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    mass = np.zeros((len(y), n_classes))
    mass[np.arange(len(y)), y] = w
    total = mass.sum(axis=0)
    best = None
    if CONSTANT not in exclude:
        c = int(np.argmax(total))
        best = (1.0 - total[c] / total.sum(), -1, float("inf"), c, c)
    norm = total.sum()
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cum = np.cumsum(mass[order], axis=0)[:-1]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        thresholds = (xs[:-1] + xs[1:]) / 2.0
        if exclude:
            valid &= np.array([(f, float(t)) not in exclude for t in thresholds])
            if not valid.any():
                continue
        rest = total - cum
        err = 1.0 - (cum.max(axis=1) + rest.max(axis=1)) / norm
        err = np.where(valid, err, np.inf)
        p = int(np.flatnonzero(err <= err.min() + TIE_EPS)[0])
        if best is None or err[p] < best[0] - TIE_EPS:
            best = (float(err[p]), f, float(thresholds[p]), int(np.argmax(cum[p])), int(np.argmax(rest[p])))
    if best is None:
        return None
    _, f, t, lc, rc = best
    stump = StumpModel(f, t, lc, rc, n_classes)
    # recomputed from the misclassified mass so a perfect stump reports exactly 0
    stump.training_meta["weighted_error"] = float(w[stump.predict_X(X) != y].sum() / norm)
    return stump


def train_stump(V, labels, weights, n_classes=None):
    """Weighted decision stump on the vector view of ``V``; weights must sum to 1."""
    weights = np.asarray(weights, dtype=np.float64)
    if abs(weights.sum() - 1.0) > 1e-9 or (weights < 0).any():
        raise ValueError("stump weights must be a distribution summing to 1")
    y = np.asarray(labels, dtype=np.int64)
    n_classes = n_classes or int(y.max()) + 1
    return fit_stump(V.vectors, y, weights, n_classes)
