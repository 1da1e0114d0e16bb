import warnings

import numpy as np

from ..core import ParamSet, Scorer
from ..rng import numpy_rng


class DegenerateLabels(UserWarning):
    pass


class PerceptronModel(Scorer):
    family = "perceptron"
    input_kind = "vector"

    def __init__(self, w, b, params=None, training_meta=None):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = float(b)
        self.params = ParamSet(params or {})
        self.training_meta = dict(training_meta or {})

    @property
    def epochs_run(self):
        return self.training_meta.get("epochs_run")

    def score(self, x):
        return float(np.dot(self.w, x) + self.b)

    def score_matrix(self, V):
        return self.inputs(V) @ self.w + self.b

    def margin(self, X, y):
        """Minimum signed geometric margin of the hyperplane over (X, y)."""
        norm = np.linalg.norm(self.w)
        if norm == 0:
            return 0.0
        signs = np.where(np.asarray(y) == 1, 1.0, -1.0)
        return float(np.min(signs * (np.asarray(X) @ self.w + self.b)) / norm)

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "training_meta": self.training_meta,
            "w": self.w.tolist(),
            "b": self.b,
        }

    @classmethod
    def from_dict(cls, d, components=()):
        return cls(d["w"], d["b"], d["params"], d["training_meta"])


def fit_perceptron(X, labels, epochs, learning_rate, init_seed):
    """Mistake-driven perceptron from Gaussian initial weights.

    Returns ``(w, b, epochs_run, mistakes_per_epoch)``; training stops after
    the first epoch without a mistake.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.where(np.asarray(labels) == 1, 1.0, -1.0)
    rng = numpy_rng(init_seed)
    w = rng.standard_normal(X.shape[1])
    b = float(rng.standard_normal())
    history = []
    for _ in range(epochs):
        mistakes = 0
        for xi, yi in zip(X, y):
            if yi * (xi @ w + b) <= 0:
                w = w + learning_rate * yi * xi
                b += learning_rate * yi
                mistakes += 1
        history.append(mistakes)
        if mistakes == 0:
            break
    return w, b, len(history), history


def train_perceptron(V, labels, params):
    """Binary perceptron on the vector view of ``V``; labels are 0/1."""
    params = ParamSet(params)
    X = V.vectors
    labels = np.asarray(labels)
    if X.shape[1] < 1:
        raise ValueError("perceptron needs at least one feature")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("perceptron labels must be 0/1 (use one-vs-rest for multiclass)")
    degenerate = len(np.unique(labels)) < 2
    if degenerate:
        warnings.warn("perceptron trained on single-class labels", DegenerateLabels, stacklevel=2)
    w, b, epochs_run, history = fit_perceptron(
        X, labels, int(params["epochs"]), float(params["learning_rate"]), int(params["init_seed"])
    )
    scores = X @ w + b
    meta = {
        "epochs_run": epochs_run,
        "mistakes": history,
        "degenerate": degenerate,
        "score_mean": float(scores.mean()),
        "score_std": float(scores.std()),
    }
    return PerceptronModel(w, b, params, meta)
