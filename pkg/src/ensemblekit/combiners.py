"""Combining functions: maximum, average, majority vote, learned linear meta-classifier."""

from dataclasses import dataclass, field

import numpy as np

from .core import EnsembleError, argmax_rows
from .rng import SplitMix64, derive_seed, numpy_rng


@dataclass
class ScoreVector:
    values: list
    component_ids: list = field(default_factory=list)


@dataclass
class VoteVector:
    values: list


def _values(s):
    vals = s.values if isinstance(s, (ScoreVector, VoteVector)) else s
    vals = np.asarray(vals)
    if vals.size == 0:
        raise ValueError("cannot combine an empty vector")
    return vals


def combine_max(s):
    return float(np.max(_values(s).astype(np.float64)))


def combine_average(s):
    vals = _values(s).astype(np.float64)
    return float(np.sum(vals) / len(vals))


def combine_majority(votes, n_classes, tie_seed=0):
    """Plurality label; a tie among the top labels is a uniform draw.

    ``tie_seed`` is an int or a SplitMix64 instance (whose ``calls`` counter
    records how often a tie had to be broken).
    """
    vals = _values(votes).astype(np.int64)
    if vals.min() < 0 or vals.max() >= n_classes:
        raise ValueError("vote outside 0..n_classes-1")
    counts = np.bincount(vals, minlength=n_classes)
    top = np.flatnonzero(counts == counts.max())
    if len(top) == 1:
        return int(top[0])
    rng = tie_seed if isinstance(tie_seed, SplitMix64) else SplitMix64(tie_seed)
    return int(rng.choice(top))


def majority_rows(votes, n_classes, tie_seed=0):
    """Row-wise majority over an (n, ell) label matrix; row i breaks ties with derive_seed(tie_seed, i)."""
    votes = np.asarray(votes, dtype=np.int64)
    out = np.empty(len(votes), dtype=np.int64)
    for i, row in enumerate(votes):
        counts = np.bincount(row, minlength=n_classes)
        top = np.flatnonzero(counts == counts.max())
        out[i] = top[0] if len(top) == 1 else combine_majority(row, n_classes, derive_seed(tie_seed, i))
    return out


class MetaCombiner:
    """Linear hinge-loss combiner over z-scored component scores.

    Binary: class 1 iff ``w . z + b >= 0``.  Multiclass: one-vs-rest, argmax.
    """

    def __init__(self, weights, bias, mean, std, n_classes, tie_seed=0, algorithm="hinge-sgd"):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.n_classes = int(n_classes)
        self.tie_seed = int(tie_seed)
        self.algorithm = algorithm

    def normalize(self, S):
        return (np.atleast_2d(np.asarray(S, dtype=np.float64)) - self.mean) / self.std

    def decision(self, S):
        return self.normalize(S) @ self.weights + self.bias

    def predict_scores(self, S):
        d = self.decision(S)
        if self.n_classes == 2:
            return (d[:, 0] >= 0).astype(np.int64)
        return argmax_rows(d, self.tie_seed)

    def threshold_equivalent(self):
        """For one binary component: (theta, sign) with class 1 iff sign*(s - theta) >= 0."""
        if self.weights.shape != (1, 1):
            raise ValueError("only defined for a single binary component")
        w, b = self.weights[0, 0], self.bias[0]
        if w == 0:
            raise ValueError("zero weight: constant decision")
        return float(self.mean[0] - b * self.std[0] / w), float(np.sign(w))

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "n_classes": self.n_classes,
            "tie_seed": self.tie_seed,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, d, components=()):
        return cls(d["weights"], d["bias"], d["mean"], d["std"], d["n_classes"], d["tie_seed"], d["algorithm"])


def _hinge_sgd(Z, y, lam, epochs, eta0, rng):
    """Stochastic subgradient descent on L2-regularized hinge loss; y in {-1, +1}."""
    w = np.zeros(Z.shape[1])
    b = 0.0
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(y)):
            eta = eta0 / (1.0 + eta0 * lam * t)
            margin = y[i] * (Z[i] @ w + b)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * y[i] * Z[i]
                b += eta * y[i]
            t += 1
    return w, b


def train_meta_combiner(component_scores, labels, n_classes=None, lam=1e-4, epochs=100, eta0=0.1, seed=0):
    """Fit the linear meta-classifier on an (n, d) matrix of component scores.

    The scores should come from data the components were not trained on
    (see ``ensembles.out_of_fold_scores``).
    """
    S = np.asarray(component_scores, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[1] == 0:
        raise ValueError("meta combiner needs at least one component score")
    y = np.asarray(labels, dtype=np.int64)
    n_classes = n_classes or int(y.max()) + 1
    if len(np.unique(y)) < 2:
        raise EnsembleError("meta combiner needs at least two classes in its training labels")
    mean = S.mean(axis=0)
    std = S.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Z = (S - mean) / std
    rng = numpy_rng(seed)
    if n_classes == 2:
        w, b = _hinge_sgd(Z, np.where(y == 1, 1.0, -1.0), lam, epochs, eta0, rng)
        weights, bias = w[:, None], np.array([b])
    else:
        cols = [_hinge_sgd(Z, np.where(y == k, 1.0, -1.0), lam, epochs, eta0, rng) for k in range(n_classes)]
        weights = np.column_stack([c[0] for c in cols])
        bias = np.array([c[1] for c in cols])
    return MetaCombiner(weights, bias, mean, std, n_classes, seed)


def apply_meta(meta, s):
    """Class label for a single component-score vector."""
    return int(meta.predict_scores(_values(s).astype(np.float64)[None, :])[0])
