"""Data model shared by every scorer, combiner and ensemble."""

from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import SplitMix64, derive_seed

OTHER = "<other>"


class EnsembleError(Exception):
    """Base class for errors raised by this package."""


class VocabularyMismatch(EnsembleError):
    pass


class NotTrainedError(EnsembleError):
    pass


class MissingStatistics(EnsembleError):
    pass


@dataclass
class Sample:
    id: str
    tokens: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 1 or len(self.tokens) == 0:
            raise ValueError(f"sample {self.id!r} has no tokens")


class Vocabulary:
    """Dense mnemonic -> id map with a reserved id for unseen mnemonics.

    Ids are ordered by descending training frequency, then name; the
    reserved ``<other>`` entry is always the last id.
    """

    def __init__(self, mnemonics):
        mnemonics = [m for m in mnemonics if m != OTHER]
        if len(set(mnemonics)) != len(mnemonics):
            raise ValueError("duplicate mnemonics in vocabulary")
        self.tokens = tuple(mnemonics) + (OTHER,)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, sequences, max_size=None):
        counts = Counter()
        for seq in sequences:
            counts.update(seq)
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        if max_size is not None:
            ordered = ordered[: max(0, max_size - 1)]
        return cls(ordered)

    @property
    def size(self):
        return len(self.tokens)

    @property
    def other_id(self):
        return len(self.tokens) - 1

    def encode(self, mnemonics):
        other = self.other_id
        return np.array([self.index.get(m, other) for m in mnemonics], dtype=np.int64)

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class FeatureMatrix:
    """The m x n matrix whose column i is the feature vector of sample i.

    ``sequences`` is the optional parallel token-sequence view used by
    sequence scorers.
    """

    values: np.ndarray
    row_labels: tuple
    sequences: Optional[tuple] = None
    vocab_size: Optional[int] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("feature matrix must be 2-D (m x n)")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_labels", tuple(self.row_labels))
        if len(self.row_labels) != values.shape[0]:
            raise ValueError("row_labels must name every feature row")
        if self.sequences is not None:
            seqs = tuple(np.asarray(s, dtype=np.int64) for s in self.sequences)
            if len(seqs) != values.shape[1]:
                raise ValueError("sequence view must align with the columns")
            object.__setattr__(self, "sequences", seqs)

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def vectors(self):
        """Sample-major view (n x m)."""
        return self.values.T

    def select_columns(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        seqs = None if self.sequences is None else tuple(self.sequences[i] for i in idx)
        return FeatureMatrix(self.values[:, idx], self.row_labels, seqs, self.vocab_size)

    def select_rows(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        labels = tuple(self.row_labels[i] for i in idx)
        return FeatureMatrix(self.values[idx, :], labels, self.sequences, self.vocab_size)


def _encode_ngram(gram, vocab_size):
    code = 0
    for t in gram:
        code = code * vocab_size + int(t)
    return code


def _decode_ngram(code, n, vocab_size):
    out = []
    for _ in range(n):
        code, t = divmod(code, vocab_size)
        out.append(t)
    return tuple(reversed(out))


def _ngram_codes(tokens, n, vocab_size):
    """Base-``vocab_size`` integer code of every n-gram; codes sort like the tuples."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if len(tokens) < n:
        return np.empty(0, dtype=np.int64)
    code = np.zeros(len(tokens) - n + 1, dtype=np.int64)
    for i in range(n):
        code = code * vocab_size + tokens[i : len(tokens) - n + 1 + i]
    return code


def build_feature_matrix(samples, vocab_size, representation="histogram", ngrams=None):
    """Assemble a FeatureMatrix from token samples.

    ``representation`` is ``"histogram"``, ``"sequence"`` or ``("ngram", n)``.
    For n-grams, ``ngrams`` fixes the retained n-gram rows (pass the training
    matrix's ``row_labels`` when featurizing test data); by default every
    n-gram observed in ``samples`` is retained, in sorted order.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample list")
    if isinstance(vocab_size, Vocabulary):
        vocab_size = vocab_size.size
    if vocab_size <= 0:
        raise ValueError("vocabulary size must be positive")
    seqs = []
    for s in samples:
        tokens = s.tokens if isinstance(s, Sample) else np.asarray(s, dtype=np.int64)
        if tokens.min() < 0 or tokens.max() >= vocab_size:
            sid = s.id if isinstance(s, Sample) else "?"
            raise VocabularyMismatch(f"sample {sid!r} has a token outside 0..{vocab_size - 1}")
        seqs.append(tokens)

    if isinstance(representation, (tuple, list)):
        kind, order = representation
        if kind != "ngram" or int(order) < 1:
            raise ValueError(f"unknown representation {representation!r}")
        order = int(order)
        codes = [_ngram_codes(t, order, vocab_size) for t in seqs]
        if ngrams is None:
            observed = np.unique(np.concatenate(codes)) if codes else np.empty(0, np.int64)
            ngrams = [_decode_ngram(int(c), order, vocab_size) for c in observed]
        ngrams = [tuple(int(x) for x in g) for g in ngrams]
        if any(len(g) != order for g in ngrams):
            raise ValueError(f"retained n-grams must all have length {order}")
        keys = np.array([_encode_ngram(g, vocab_size) for g in ngrams], dtype=np.int64)
        order_idx = np.argsort(keys, kind="stable")
        sorted_keys = keys[order_idx]
        values = np.zeros((len(ngrams), len(seqs)))
        for j, c in enumerate(codes):
            if not len(sorted_keys) or not len(c):
                continue
            pos = np.searchsorted(sorted_keys, c)
            pos = np.minimum(pos, len(sorted_keys) - 1)
            hit = sorted_keys[pos] == c
            np.add.at(values[:, j], order_idx[pos[hit]], 1.0)
        totals = values.sum(axis=0)
        values = values / np.where(totals > 0, totals, 1.0)
        return FeatureMatrix(values, tuple(ngrams), None, vocab_size)

    if representation not in ("histogram", "sequence"):
        raise ValueError(f"unknown representation {representation!r}")
    values = np.empty((vocab_size, len(seqs)))
    for j, t in enumerate(seqs):
        values[:, j] = np.bincount(t, minlength=vocab_size) / len(t)
    view = tuple(seqs) if representation == "sequence" else None
    return FeatureMatrix(values, tuple(range(vocab_size)), view, vocab_size)


class ParamSet(Mapping):
    """Ordered, immutable parameter vector (name -> value)."""

    def __init__(self, entries=None, **kwargs):
        items = dict(entries or {})
        items.update(kwargs)
        self._items = tuple(items.items())
        self._dict = dict(self._items)

    def __getitem__(self, key):
        return self._dict[key]

    def __iter__(self):
        return (k for k, _ in self._items)

    def __len__(self):
        return len(self._items)

    @property
    def k(self):
        return len(self._items)

    def replace(self, **changes):
        merged = dict(self._items)
        merged.update(changes)
        return ParamSet(merged)

    def to_dict(self):
        return dict(self._items)

    def __repr__(self):
        return f"ParamSet({self.to_dict()!r})"

    def __eq__(self, other):
        return isinstance(other, Mapping) and dict(self) == dict(other)

    def __hash__(self):
        return hash(self._items)


class Scorer:
    """A trained real-valued scoring function S(x; V, params).

    Subclasses implement ``score`` for a single sample in the representation
    they consume (``"sequence"`` or ``"vector"``).
    """

    family = "scorer"
    input_kind = "vector"
    is_trained = True

    def score(self, x):
        raise NotImplementedError

    def inputs(self, V):
        if self.input_kind == "sequence":
            if V.sequences is None:
                raise ValueError(f"{self.family} scorer needs the sequence view")
            return V.sequences
        return V.vectors

    def score_matrix(self, V):
        return np.array([self.score(x) for x in self.inputs(V)], dtype=np.float64)


class Classifier:
    """Maps a FeatureMatrix to class labels in 0..n_classes-1."""

    n_classes = 2
    is_trained = True

    def predict(self, V):
        raise NotImplementedError

    def class_scores(self, V):
        raise NotImplementedError(f"{type(self).__name__} produces labels only")


class ThresholdClassifier(Classifier):
    n_classes = 2

    def __init__(self, scorer, threshold):
        self.scorer = scorer
        self.threshold = float(threshold)

    def classify(self, x):
        return int(self.scorer.score(x) >= self.threshold)

    def predict(self, V):
        return (self.scorer.score_matrix(V) >= self.threshold).astype(np.int64)

    def to_dict(self):
        return {"threshold": self.threshold, "components": [self.scorer]}

    @classmethod
    def from_dict(cls, d, components):
        return cls(components[0], d["threshold"])


def threshold_classifier(scorer, threshold):
    """Binary classifier: 1 iff score >= threshold."""
    if not isinstance(scorer, Scorer) or not scorer.is_trained:
        raise NotTrainedError("threshold_classifier needs a trained scorer")
    return ThresholdClassifier(scorer, threshold)


def seeded_argmax(scores, tie_seed, index=0):
    """Argmax of one score row; exact ties are broken from ``tie_seed``."""
    best = np.max(scores)
    tied = np.flatnonzero(scores == best)
    if len(tied) == 1:
        return int(tied[0])
    return int(SplitMix64(derive_seed(tie_seed, index)).choice(tied))


def argmax_rows(scores, tie_seed):
    scores = np.asarray(scores)
    out = np.argmax(scores, axis=1)
    ties = np.flatnonzero((scores == scores.max(axis=1, keepdims=True)).sum(axis=1) > 1)
    for i in ties:
        out[i] = seeded_argmax(scores[i], tie_seed, i)
    return out.astype(np.int64)


class ArgmaxClassifier(Classifier):
    """Multiclass decision from one scorer per class."""

    def __init__(self, per_class, normalizer="none", tie_seed=0, stats=None):
        self.per_class = list(per_class)
        self.normalizer = normalizer
        self.tie_seed = int(tie_seed)
        self.stats = None if stats is None else np.asarray(stats, dtype=np.float64)
        self.n_classes = len(self.per_class)

    def raw_scores(self, V):
        return np.column_stack([s.score_matrix(V) for s in self.per_class])

    def class_scores(self, V):
        raw = self.raw_scores(V)
        if self.normalizer == "zscore":
            return (raw - self.stats[:, 0]) / self.stats[:, 1]
        return raw

    def predict(self, V):
        return argmax_rows(self.class_scores(V), self.tie_seed)

    def to_dict(self):
        return {
            "normalizer": self.normalizer,
            "tie_seed": self.tie_seed,
            "stats": None if self.stats is None else self.stats.tolist(),
            "components": self.per_class,
        }

    @classmethod
    def from_dict(cls, d, components):
        return cls(components, d["normalizer"], d["tie_seed"], d["stats"])


def argmax_classifier(per_class, normalizer="none", tie_seed=0, stats=None):
    """Argmax over per-class scorers, optionally z-scored.

    With ``normalizer="zscore"`` each scorer's (mean, std) comes from
    ``stats`` or from its ``training_meta`` (``score_mean``/``score_std``).
    """
    per_class = list(per_class)
    if len(per_class) < 2:
        raise ValueError("argmax_classifier needs at least 2 classes")
    for s in per_class:
        if not getattr(s, "is_trained", False):
            raise NotTrainedError("all per-class scorers must be trained")
    if normalizer not in ("none", "zscore"):
        raise ValueError(f"unknown normalizer {normalizer!r}")
    if normalizer == "zscore" and stats is None:
        try:
            stats = [(s.training_meta["score_mean"], s.training_meta["score_std"]) for s in per_class]
        except (AttributeError, KeyError):
            raise MissingStatistics("zscore normalization needs per-class score statistics") from None
    if stats is not None:
        stats = np.asarray(stats, dtype=np.float64)
        stats[:, 1] = np.where(stats[:, 1] > 0, stats[:, 1], 1.0)
    return ArgmaxClassifier(per_class, normalizer, tie_seed, stats)


@dataclass
class Combiner:
    kind: str
    ell: int = 1
    meta_state: Optional[object] = None

    def __post_init__(self):
        if self.kind not in ("max", "average", "majority", "meta"):
            raise ValueError(f"unknown combiner {self.kind!r}")
        if self.ell < 1:
            raise ValueError("combiner needs at least one component")
