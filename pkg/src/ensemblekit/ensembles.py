"""Bagging, boosting and stacking builders.

Component ``i`` of any ensemble derives its seed with
``rng.component_seed(master_seed, i)``; component 0 reuses the master seed,
so one-component ensembles reduce exactly to their base scorer.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .combiners import majority_rows, train_meta_combiner
from .core import Classifier, EnsembleError, ParamSet, Scorer, argmax_classifier, build_feature_matrix
from .rng import component_seed, derive_seed, numpy_rng
from .scorers.hmm import train_hmm
from .scorers.perceptron import PerceptronModel, train_perceptron
from .scorers.stump import CONSTANT, StumpModel, fit_stump, train_stump
from .scorers.tree import train_forest, train_tree

SCORER_FAMILIES = ("hmm", "perceptron")
CLASSIFIER_FAMILIES = ("tree", "forest", "stump")
BAGGING_MODES = ("none", "samples", "features", "both")
BOOSTING_MODES = ("none", "restarts", "adaboost", "weight-average")


class DegenerateModel(UserWarning):
    pass


def train_base(family, V, labels, params, n_classes=None):
    if family == "hmm":
        return train_hmm(V, params)
    if family == "perceptron":
        return train_perceptron(V, labels, params)
    if family == "tree":
        return train_tree(V, labels, params, n_classes)
    if family == "forest":
        return train_forest(V, labels, params, n_classes)
    if family == "stump":
        return train_stump(V, labels, np.full(V.n, 1.0 / V.n), n_classes)
    raise ValueError(f"unknown scorer family {family!r}")


@dataclass
class EnsembleSpec:
    """Declarative ensemble description.

    ``count`` is the component count (bags, restarts or perceptrons); for a
    bagged+boosted HMM ``count`` is the number of bags and ``restarts`` the
    restarts per bag.  ``adaboost`` holds n_estimators, learning_rate,
    algorithm and pool.
    """

    base: str
    params: dict = field(default_factory=dict)
    count: int = 1
    bagging: str = "none"
    sample_fraction: float = 0.8
    feature_fraction: float = 1.0
    replace: bool = False
    boosting: str = "none"
    restarts: int = 1
    combiner: str = "average"
    master_seed: int = 0
    adaboost: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.count < 1 or self.restarts < 1:
            raise ValueError("component counts must be >= 1")
        if self.bagging not in BAGGING_MODES:
            raise ValueError(f"bagging must be one of {BAGGING_MODES}")
        if self.boosting not in BOOSTING_MODES:
            raise ValueError(f"boosting must be one of {BOOSTING_MODES}")
        for frac in (self.sample_fraction, self.feature_fraction):
            if not 0.0 < frac <= 1.0:
                raise ValueError("bagging fractions must be in (0, 1]")
        if self.combiner not in ("max", "average", "majority"):
            raise ValueError("bagging combiner must be max, average or majority")
        if self.boosting == "restarts" and self.base != "hmm":
            raise ValueError("random restarts are defined for the hmm family")
        if self.boosting == "weight-average" and (self.base != "perceptron" or self.bagging != "none"):
            raise ValueError("weight averaging applies to unbagged perceptrons")
        if self.boosting == "adaboost" and self.bagging != "none":
            raise ValueError("adaboost cannot be combined with bagging")
        if self.base == "hmm" and self.bagging in ("features", "both"):
            raise ValueError("feature bagging needs a vector representation; hmm consumes sequences")

    @property
    def returns_scorer(self):
        return self.base in SCORER_FAMILIES and self.boosting != "adaboost"


def subset_indices(n, count, fraction, seed, replace=False):
    """Index arrays for ``count`` subsets of ``ceil(fraction * n)`` items.

    Without replacement the indices are sorted, so fraction 1.0 keeps the
    original order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    size = math.ceil(fraction * n)
    if size < 1:
        raise ValueError("subset would be empty")
    out = []
    for i in range(count):
        rng = numpy_rng(component_seed(seed, i))
        if replace:
            out.append(rng.integers(0, n, size=size))
        else:
            out.append(np.sort(rng.choice(n, size=size, replace=False)))
    return out


def bag_samples(V, count, fraction, seed, replace=False, return_indices=False):
    if V.n < 2:
        raise ValueError("sample bagging needs at least 2 samples")
    idx = subset_indices(V.n, count, fraction, seed, replace)
    mats = [V.select_columns(i) for i in idx]
    return (mats, idx) if return_indices else mats


def bag_features(V, count, fraction, seed, return_indices=False):
    idx = subset_indices(V.m, count, fraction, derive_seed(seed, 0x5EED), False)
    mats = [V.select_rows(i) for i in idx]
    return (mats, idx) if return_indices else mats


class RowProjection(Classifier, Scorer):
    """Wraps a model trained on a row subset; inputs are projected first."""

    def __init__(self, model, rows):
        self.model = model
        self.rows = np.asarray(rows, dtype=np.int64)
        self.n_classes = getattr(model, "n_classes", 2)
        self.family = model.family
        self.input_kind = getattr(model, "input_kind", "vector")
        self.training_meta = getattr(model, "training_meta", {})

    def project(self, V):
        return V.select_rows(self.rows)

    def score(self, x):
        return self.model.score(np.asarray(x)[self.rows])

    def score_matrix(self, V):
        return self.model.score_matrix(self.project(V))

    def predict(self, V):
        return self.model.predict(self.project(V))

    def class_scores(self, V):
        return self.model.class_scores(self.project(V))

    def to_dict(self):
        return {"rows": self.rows.tolist(), "components": [self.model]}

    @classmethod
    def from_dict(cls, d, components):
        return cls(components[0], d["rows"])


class NgramView(Classifier):
    """Wraps a classifier trained on n-gram features derived from the sequence view."""

    def __init__(self, model, order, ngrams):
        self.model = model
        self.order = int(order)
        self.ngrams = [tuple(int(t) for t in g) for g in ngrams]
        self.n_classes = model.n_classes
        self.family = getattr(model, "family", "")
        self.training_meta = {}

    @classmethod
    def fit(cls, builder, V, labels, order):
        X = ngram_view(V, order)
        return cls(builder(X, labels), order, X.row_labels)

    def project(self, V):
        return ngram_view(V, self.order, self.ngrams)

    def predict(self, V):
        return self.model.predict(self.project(V))

    def class_scores(self, V):
        return self.model.class_scores(self.project(V))

    def to_dict(self):
        return {"order": self.order, "ngrams": [list(g) for g in self.ngrams], "components": [self.model]}

    @classmethod
    def from_dict(cls, d, components):
        return cls(components[0], d["order"], d["ngrams"])


def ngram_view(V, order, ngrams=None):
    if V.sequences is None:
        raise EnsembleError("n-gram features need the sequence view")
    return build_feature_matrix(V.sequences, V.vocab_size, ("ngram", order), ngrams)


class EnsembleScorer(Scorer):
    """Per-sample max or average of component scores."""

    family = "ensemble"

    def __init__(self, components, combiner="average", training_meta=None):
        if combiner not in ("max", "average"):
            raise ValueError("scorer ensembles combine by max or average")
        self.components = list(components)
        self.combiner = combiner
        self.training_meta = dict(training_meta or {})
        self.input_kind = self.components[0].input_kind

    def component_scores(self, V):
        return np.vstack([c.score_matrix(V) for c in self.components])

    def score_matrix(self, V):
        s = self.component_scores(V)
        if self.combiner == "max":
            return s.max(axis=0)
        return s.sum(axis=0) / len(self.components)

    def score(self, x):
        s = np.array([c.score(x) for c in self.components])
        return float(s.max() if self.combiner == "max" else s.sum() / len(s))

    def to_dict(self):
        return {"combiner": self.combiner, "training_meta": self.training_meta, "components": self.components}

    @classmethod
    def from_dict(cls, d, components):
        return cls(components, d["combiner"], d["training_meta"])


class BaggedClassifier(Classifier):
    """Multiclass bag: combine class-score matrices (max/average) or labels (majority)."""

    family = "ensemble"

    def __init__(self, components, combiner="average", n_classes=2, tie_seed=0):
        self.components = list(components)
        self.combiner = combiner
        self.n_classes = int(n_classes)
        self.tie_seed = int(tie_seed)

    def class_scores(self, V):
        s = np.stack([c.class_scores(V) for c in self.components])
        if self.combiner == "max":
            return s.max(axis=0)
        if self.combiner == "average":
            return s.sum(axis=0) / len(self.components)
        votes = np.column_stack([c.predict(V) for c in self.components])
        return np.stack([np.bincount(r, minlength=self.n_classes) for r in votes]) / len(self.components)

    def predict(self, V):
        if self.combiner == "majority":
            votes = np.column_stack([c.predict(V) for c in self.components])
            return majority_rows(votes, self.n_classes, self.tie_seed)
        return np.argmax(self.class_scores(V), axis=1)

    def to_dict(self):
        return {
            "combiner": self.combiner,
            "n_classes": self.n_classes,
            "tie_seed": self.tie_seed,
            "components": self.components,
        }

    @classmethod
    def from_dict(cls, d, components):
        return cls(components, d["combiner"], d["n_classes"], d["tie_seed"])


def _score_stats(model, V):
    s = model.score_matrix(V)
    model.training_meta["score_mean"] = float(s.mean())
    model.training_meta["score_std"] = float(s.std())
    return model


def build_bagged_ensemble(spec, V, labels=None, n_classes=None):
    """Train ``spec.count`` same-parameter components on bagged copies of ``V``.

    Scorer families (hmm, perceptron) yield an EnsembleScorer; tree and
    forest yield a BaggedClassifier.
    """
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    n = V.n
    sample_idx = [np.arange(n)] * spec.count
    if spec.bagging in ("samples", "both"):
        sample_idx = subset_indices(n, spec.count, spec.sample_fraction, spec.master_seed, spec.replace)
    row_idx = None
    if spec.bagging in ("features", "both"):
        row_idx = subset_indices(V.m, spec.count, spec.feature_fraction, derive_seed(spec.master_seed, 0x5EED))
    if n_classes is None and labels is not None and spec.base in CLASSIFIER_FAMILIES:
        n_classes = int(labels.max()) + 1
    components = []
    for i in range(spec.count):
        Vi = V.select_columns(sample_idx[i]) if spec.bagging in ("samples", "both") else V
        if row_idx is not None:
            Vi = Vi.select_rows(row_idx[i])
        yi = None if labels is None else labels[sample_idx[i]]
        try:
            model = train_base(spec.base, Vi, yi, spec.params, n_classes)
        except Exception as exc:
            raise EnsembleError(f"component {i} failed to train: {exc}") from exc
        components.append(model if row_idx is None else RowProjection(model, row_idx[i]))
    if spec.base in SCORER_FAMILIES:
        if spec.combiner == "majority":
            raise ValueError("scorer bags combine by max or average")
        return _score_stats(EnsembleScorer(components, spec.combiner), V)
    return BaggedClassifier(components, spec.combiner, n_classes, derive_seed(spec.master_seed, 0x71E))


def hmm_random_restarts(V, params, count, seed):
    """Train ``count`` HMMs that differ only in initial seed; keep the best.

    The returned model is the restart with the highest final training
    log-likelihood (first one on ties).
    """
    if count < 1:
        raise ValueError("need at least one restart")
    params = ParamSet(params)
    models = [train_hmm(V, params.replace(seed=component_seed(seed, i))) for i in range(count)]
    lls = [m.train_loglik for m in models]
    best = int(np.argmax(lls))
    if all(m.training_meta["loglik_history"][-1] <= m.training_meta["loglik_history"][0] for m in models):
        warnings.warn("no restart improved on its initialization", DegenerateModel, stacklevel=2)
    chosen = models[best]
    chosen.training_meta["restart_logliks"] = lls
    chosen.training_meta["restart_seeds"] = [int(m.params["seed"]) for m in models]
    chosen.training_meta["selected_restart"] = best
    return chosen


def bagged_perceptron(V, labels, params, count, seed):
    """Average the weights of ``count`` perceptrons that differ only in init seed."""
    if count < 1:
        raise ValueError("need at least one perceptron")
    params = ParamSet(params)
    comps = []
    for i in range(count):
        p = params.replace(init_seed=component_seed(seed, i))
        try:
            comps.append(train_perceptron(V, labels, p))
        except Exception as exc:
            raise EnsembleError(f"component {i} failed to train: {exc}") from exc
    if count == 1:
        return comps[0]
    return _score_stats(average_perceptrons(comps, params), V)


def average_perceptrons(models, params=None):
    """Perceptron whose weights and bias are the component means.

    Flags ``degenerate_margin`` (and warns) when the weights cancel out.
    """
    w = np.sum([c.w for c in models], axis=0) / len(models)
    b = sum(c.b for c in models) / len(models)
    scale = np.mean([np.linalg.norm(c.w) for c in models])
    degenerate = bool(np.linalg.norm(w) <= 1e-12 * max(scale, 1.0))
    if degenerate:
        warnings.warn("averaged perceptron weights cancel out", DegenerateModel, stacklevel=2)
    meta = {
        "components": [{"w": c.w.tolist(), "b": c.b} for c in models],
        "degenerate_margin": degenerate,
    }
    return PerceptronModel(w, b, params, meta)


class BoostedModel(Classifier):
    """C_M(x) = argmax_k sum_m alpha_m [c_m(x) == k] (lowest class on ties)."""

    family = "boosted"

    def __init__(self, stumps, alphas, n_classes, variant="SAMME", training_meta=None):
        self.stumps = list(stumps)
        self.alphas = np.asarray(alphas, dtype=np.float64)
        self.n_classes = int(n_classes)
        self.variant = variant
        self.training_meta = dict(training_meta or {})

    @property
    def n_stages(self):
        return len(self.stumps)

    def class_scores_X(self, X, stages=None):
        out = np.zeros((len(X), self.n_classes))
        rows = np.arange(len(X))
        for stump, alpha in list(zip(self.stumps, self.alphas))[:stages]:
            out[rows, stump.predict_X(X)] += alpha
        return out

    def class_scores(self, V):
        return self.class_scores_X(V.vectors)

    def predict_X(self, X, stages=None):
        return np.argmax(self.class_scores_X(X, stages), axis=1)

    def predict(self, V):
        return self.predict_X(V.vectors)

    def to_dict(self):
        return {
            "variant": self.variant,
            "n_classes": self.n_classes,
            "alphas": self.alphas.tolist(),
            "training_meta": self.training_meta,
            "stumps": [s.to_dict() for s in self.stumps],
        }

    @classmethod
    def from_dict(cls, d, components=()):
        stumps = [StumpModel.from_dict(s) for s in d["stumps"]]
        return cls(stumps, d["alphas"], d["n_classes"], d["variant"], d["training_meta"])


ZERO_ERROR_CLAMP = 1e-10


def adaboost(V, labels, n_estimators, learning_rate=1.0, algorithm="SAMME", n_classes=None, pool="retrain"):
    """Multiclass AdaBoost (SAMME) over weighted decision stumps.

    ``pool="retrain"`` refits the best stump on the reweighted data every
    stage; ``pool="fixed"`` draws from the enumerated (feature, threshold)
    splits and never reuses one.
    """
    if algorithm != "SAMME":
        raise ValueError(f"unsupported boosting algorithm {algorithm!r} (only SAMME)")
    if pool not in ("retrain", "fixed"):
        raise ValueError("pool must be 'retrain' or 'fixed'")
    if n_estimators < 1 or learning_rate <= 0:
        raise ValueError("need n_estimators >= 1 and learning_rate > 0")
    X = V.vectors
    y = np.asarray(labels, dtype=np.int64)
    K = n_classes or int(y.max()) + 1
    if K < 2:
        raise ValueError("boosting needs at least 2 classes")
    n = len(y)
    w = np.full(n, 1.0 / n)
    stumps, alphas, errors, accuracy, weight_sums = [], [], [], [], []
    used = set()
    scores = np.zeros((n, K))
    stop_reason = "max_stages"
    for m in range(n_estimators):
        stump = fit_stump(X, y, w, K, exclude=used if pool == "fixed" else frozenset())
        if stump is None:
            stop_reason = "pool_exhausted"
            break
        err = stump.weighted_error
        if err >= 1.0 - 1.0 / K:
            if m == 0:
                raise EnsembleError("first weak learner is no better than chance: no weak learnability")
            stop_reason = "weak_learner_failed"
            break
        clamped = max(err, ZERO_ERROR_CLAMP)
        alpha = learning_rate * (math.log((1.0 - clamped) / clamped) + math.log(K - 1))
        pred = stump.predict_X(X)
        miss = pred != y
        stumps.append(stump)
        alphas.append(alpha)
        errors.append(err)
        if pool == "fixed":
            used.add(CONSTANT if stump.feature < 0 else stump.key)
        scores[np.arange(n), pred] += alpha
        accuracy.append(float(np.mean(np.argmax(scores, axis=1) == y)))
        if err == 0.0:
            stop_reason = "perfect_weak_learner"
            weight_sums.append(float(w.sum()))
            break
        w = w * np.exp(alpha * miss)
        w = w / w.sum()
        weight_sums.append(float(w.sum()))
    meta = {
        "stage_errors": errors,
        "train_accuracy": accuracy,
        "weight_sums": weight_sums,
        "stop_reason": stop_reason,
        "learning_rate": learning_rate,
        "pool": pool,
    }
    return BoostedModel(stumps, alphas, K, algorithm, meta)


def bagged_boosted_hmm(V, params, restarts, bags, seed, fraction=0.8, replace=False):
    """Sample-bag the data ``bags`` times, keep the best of ``restarts`` HMMs per bag, average."""
    if restarts < 1 or bags < 1:
        raise ValueError("restarts and bags must be >= 1")
    idx = subset_indices(V.n, bags, fraction, seed, replace)
    comps = []
    for b in range(bags):
        try:
            comps.append(hmm_random_restarts(V.select_columns(idx[b]), params, restarts, component_seed(seed, b)))
        except Exception as exc:
            raise EnsembleError(f"component {b} failed to train: {exc}") from exc
    return _score_stats(EnsembleScorer(comps, "average"), V)


def build_ensemble(spec, V, labels=None, n_classes=None):
    """Dispatch an EnsembleSpec to the matching builder."""
    if spec.boosting == "adaboost":
        cfg = dict(spec.adaboost)
        return adaboost(
            V, labels,
            int(cfg.get("n_estimators", 50)),
            float(cfg.get("learning_rate", 1.0)),
            cfg.get("algorithm", "SAMME"),
            n_classes,
            cfg.get("pool", "retrain"),
        )
    if spec.boosting == "restarts":
        if spec.bagging == "samples":
            return bagged_boosted_hmm(V, spec.params, spec.restarts, spec.count, spec.master_seed,
                                      spec.sample_fraction, spec.replace)
        return hmm_random_restarts(V, spec.params, spec.count, spec.master_seed)
    if spec.boosting == "weight-average":
        return bagged_perceptron(V, labels, spec.params, spec.count, spec.master_seed)
    if spec.bagging != "none":
        return build_bagged_ensemble(spec, V, labels, n_classes)
    return train_base(spec.base, V, labels, spec.params, n_classes)


def per_class_classifier(spec, V, labels, n_classes, normalizer="none", tie_seed=0):
    """One scorer per class, combined by argmax.

    hmm scorers train on their own class's samples only; perceptrons train
    one-vs-rest on all samples.  Class ``k`` uses master seed
    ``derive_seed(spec.master_seed, k)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    per_class = []
    for k in range(n_classes):
        sub = EnsembleSpec(**{**spec.__dict__, "master_seed": derive_seed(spec.master_seed, k)})
        if sub.base == "hmm":
            Vk = V.select_columns(np.flatnonzero(labels == k))
            if Vk.n == 0:
                raise EnsembleError(f"class {k} has no training samples")
            model = build_ensemble(_seeded(sub), Vk)
        else:
            model = build_ensemble(_seeded(sub), V, (labels == k).astype(np.int64))
        per_class.append(model)
    return argmax_classifier(per_class, normalizer, tie_seed)


def _seeded(spec):
    """Put the spec's master seed into the base params' seed slot."""
    key = "init_seed" if spec.base == "perceptron" else "seed"
    params = dict(spec.params)
    params[key] = spec.master_seed
    return EnsembleSpec(**{**spec.__dict__, "params": params})


class VotingStack(Classifier):
    family = "ensemble"

    def __init__(self, members, tie_seed=0, names=None):
        self.members = list(members)
        self.tie_seed = int(tie_seed)
        self.names = list(names or [])
        self.n_classes = self.members[0].n_classes

    def member_votes(self, V):
        return np.column_stack([m.predict(V) for m in self.members])

    def predict(self, V):
        return majority_rows(self.member_votes(V), self.n_classes, self.tie_seed)

    def to_dict(self):
        return {"tie_seed": self.tie_seed, "names": self.names, "components": self.members}

    @classmethod
    def from_dict(cls, d, components):
        return cls(components, d["tie_seed"], d["names"])


def build_voting_stack(members, tie_seed=0, names=None):
    members = list(members)
    if not members:
        raise ValueError("a voting stack needs at least one member")
    ks = {m.n_classes for m in members}
    if len(ks) != 1:
        raise EnsembleError(f"members disagree on the label space: {sorted(ks)}")
    return VotingStack(members, tie_seed, names)


def stratified_folds(labels, n_folds, seed):
    """Fold id per sample; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    folds = np.empty(len(labels), dtype=np.int64)
    rng = numpy_rng(seed)
    offset = 0
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        folds[idx] = (np.arange(len(idx)) + offset) % n_folds
        offset += len(idx)
    return folds


def out_of_fold_scores(builders, V, labels, n_folds=5, seed=0):
    """Cross-predicted class scores, shape (n, sum of member class counts).

    ``builders`` are callables ``(V, labels) -> Classifier``; every sample's
    row comes from members that never saw it during training.
    """
    labels = np.asarray(labels, dtype=np.int64)
    folds = stratified_folds(labels, n_folds, seed)
    blocks = None
    for f in range(n_folds):
        test = np.flatnonzero(folds == f)
        train = np.flatnonzero(folds != f)
        if len(test) == 0:
            continue
        Vtr, Vte = V.select_columns(train), V.select_columns(test)
        scores = [b(Vtr, labels[train]).class_scores(Vte) for b in builders]
        if blocks is None:
            blocks = [np.zeros((V.n, s.shape[1])) for s in scores]
        for blk, s in zip(blocks, scores):
            blk[test] = s
    return np.hstack(blocks)


class MetaStack(Classifier):
    """Members' class scores fed to a learned linear meta-classifier."""

    family = "ensemble"

    def __init__(self, members, meta, names=None):
        self.members = list(members)
        self.meta = meta
        self.names = list(names or [])
        self.n_classes = meta.n_classes

    def member_scores(self, V):
        return np.hstack([m.class_scores(V) for m in self.members])

    def predict(self, V):
        return self.meta.predict_scores(self.member_scores(V))

    def to_dict(self):
        return {"names": self.names, "components": self.members + [self.meta]}

    @classmethod
    def from_dict(cls, d, components):
        return cls(components[:-1], components[-1], d["names"])


def build_meta_stack(builders, V, labels, n_classes, n_folds=5, seed=0, names=None, **meta_kw):
    """Fit the meta-classifier on out-of-fold member scores, then refit members on all data."""
    oof = out_of_fold_scores(builders, V, labels, n_folds, seed)
    meta = train_meta_combiner(oof, labels, n_classes, seed=seed, **meta_kw)
    members = [b(V, labels) for b in builders]
    return MetaStack(members, meta, names)
