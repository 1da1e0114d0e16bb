import math
import warnings
from fractions import Fraction

import numpy as np
import pytest

from ensemblekit.core import EnsembleError, FeatureMatrix, build_feature_matrix
from ensemblekit.data_io import sample_markov_chain
from ensemblekit.ensembles import (
    DegenerateModel, EnsembleScorer, EnsembleSpec, NgramView, RowProjection, adaboost, average_perceptrons,
    bag_features, bag_samples, bagged_boosted_hmm, bagged_perceptron, build_bagged_ensemble, build_ensemble,
    build_meta_stack, build_voting_stack, hmm_random_restarts, out_of_fold_scores, per_class_classifier,
    stratified_folds, subset_indices,
)
from ensemblekit.rng import component_seed, derive_seed, numpy_rng
from ensemblekit.scorers.hmm import train_hmm
from ensemblekit.scorers.perceptron import PerceptronModel, train_perceptron
from ensemblekit.scorers.tree import train_tree
from oracles import samme_trace

HMM = {"n_components": 2, "n_iter": 8, "tol": 1e-6, "seed": 0}


def fm(X):
    X = np.asarray(X, dtype=float)
    return FeatureMatrix(X.T, tuple(range(X.shape[1])))


def two_families(seed, per_family=12, length=60):
    """Sequence matrix of two 3-token Markov chains with different transitions."""
    T = [np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]),
         np.array([[0.1, 0.8, 0.1], [0.1, 0.1, 0.8], [0.8, 0.1, 0.1]])]
    seqs, labels = [], []
    for k, Tk in enumerate(T):
        seqs += list(sample_markov_chain(Tk, np.full(3, 1 / 3), per_family, length, numpy_rng(derive_seed(seed, k))))
        labels += [k] * per_family
    return build_feature_matrix(seqs, 3, "sequence"), np.array(labels)


# -- bagging primitives


def test_full_fraction_keeps_everything():
    V = fm(numpy_rng(0).random((10, 3)))
    for Vi in bag_samples(V, 3, 1.0, 7):
        assert np.array_equal(Vi.values, V.values)
    for Vi in bag_features(V, 3, 1.0, 7):
        assert np.array_equal(Vi.values, V.values)


def test_half_fraction_shape():
    V = fm(numpy_rng(0).random((10, 3)))
    mats, idx = bag_samples(V, 4, 0.5, 1, return_indices=True)
    for Vi, ii in zip(mats, idx):
        assert Vi.n == 5 and len(set(ii.tolist())) == 5
        assert np.array_equal(Vi.values, V.values[:, ii])


def test_bootstrap_mode_draws_with_replacement():
    idx = subset_indices(50, 20, 1.0, 3, replace=True)
    assert all(len(i) == 50 for i in idx)
    assert any(len(set(i.tolist())) < 50 for i in idx)


def test_subsets_are_seeded():
    assert all(np.array_equal(a, b) for a, b in zip(subset_indices(30, 5, 0.5, 9), subset_indices(30, 5, 0.5, 9)))
    distinct = 0
    for seed in range(20):
        idx = subset_indices(30, 5, 0.5, seed)
        distinct += len({tuple(i.tolist()) for i in idx}) == 5
        # the documented derivation: component i draws from component_seed(seed, i)
        expect = np.sort(numpy_rng(component_seed(seed, 3)).choice(30, size=15, replace=False))
        assert np.array_equal(idx[3], expect)
    assert distinct == 20


def test_feature_fraction_quarter():
    V = fm(numpy_rng(1).random((6, 8)))
    for Vi in bag_features(V, 5, 0.25, 2):
        assert Vi.m == 2


def test_row_projection_matches_manual():
    rng = numpy_rng(2)
    X = rng.random((40, 8))
    y = (X[:, 2] + X[:, 5] > 1).astype(int)
    spec = EnsembleSpec("perceptron", {"epochs": 20, "learning_rate": 1.0, "init_seed": 0}, count=3,
                        bagging="features", feature_fraction=0.5, master_seed=4)
    ens = build_bagged_ensemble(spec, fm(X), y)
    x = rng.random(8)
    for comp in ens.components:
        assert isinstance(comp, RowProjection)
        inner = comp.model
        assert comp.score(x) == pytest.approx(float(inner.w @ x[comp.rows] + inner.b), rel=1e-14)


# -- bagged ensembles


def test_identity_bag_equals_base_scorer():
    V, _ = two_families(0)
    spec = EnsembleSpec("hmm", HMM, count=1, bagging="samples", sample_fraction=1.0, master_seed=0)
    ens = build_bagged_ensemble(spec, V)
    single = train_hmm(V, HMM)
    assert np.array_equal(ens.score_matrix(V), single.score_matrix(V))


def test_bagged_hmm_is_argmax_of_averaged_scores():
    V, y = two_families(1)
    spec = EnsembleSpec("hmm", {k: v for k, v in HMM.items() if k != "seed"}, count=5, bagging="samples", master_seed=3)
    clf = per_class_classifier(spec, V, y, 2)
    manual = []
    for bag in clf.per_class:
        assert len(bag.components) == 5
        manual.append(np.mean([c.score_matrix(V) for c in bag.components], axis=0))
    expect = np.argmax(np.column_stack(manual), axis=1)
    assert clf.predict(V).tolist() == expect.tolist()


def test_bagged_trees_beat_single_tree():
    wins = 0
    for rep in range(10):
        rng = numpy_rng(100 + rep)
        X = rng.random((300, 10))
        signal = X[:, 0] + X[:, 1] - X[:, 2]
        y = ((signal + rng.normal(0, 0.35, 300)) > 0.5).astype(int)
        tr, te = np.arange(200), np.arange(200, 300)
        params = {"max_depth": 12}
        single = train_tree(fm(X[tr]), y[tr], params)
        spec = EnsembleSpec("tree", params, count=100, bagging="both", sample_fraction=0.8,
                            feature_fraction=0.6, replace=True, master_seed=rep)
        bag = build_ensemble(spec, fm(X[tr]), y[tr], 2)
        acc_single = np.mean(single.predict(fm(X[te])) == y[te])
        acc_bag = np.mean(bag.predict(fm(X[te])) == y[te])
        wins += acc_bag >= acc_single
    assert wins >= 8


def test_majority_bag_of_trees():
    rng = numpy_rng(3)
    X = rng.random((60, 4))
    y = (X[:, 0] > 0.5).astype(int) + (X[:, 1] > 0.5)
    spec = EnsembleSpec("tree", {"max_depth": 3}, count=5, bagging="samples", combiner="majority", master_seed=1)
    bag = build_ensemble(spec, fm(X), y, 3)
    assert np.mean(bag.predict(fm(X)) == y) > 0.8


def test_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec("tree", boosting="restarts")
    with pytest.raises(ValueError):
        EnsembleSpec("hmm", bagging="features")
    with pytest.raises(ValueError):
        EnsembleSpec("hmm", count=0)
    with pytest.raises(ValueError):
        EnsembleSpec("tree", bagging="samples", sample_fraction=0.0)


# -- restarts and bagged+boosted


def test_one_restart_is_train_hmm():
    V, _ = two_families(2)
    a = hmm_random_restarts(V, HMM, 1, 5)
    b = train_hmm(V, {**HMM, "seed": 5})
    assert np.array_equal(a.transmat, b.transmat) and a.train_loglik == b.train_loglik


def test_restart_selection_is_max():
    V, _ = two_families(3)
    m = hmm_random_restarts(V, HMM, 6, 2)
    lls = m.training_meta["restart_logliks"]
    assert m.train_loglik == max(lls)
    assert m.training_meta["selected_restart"] == lls.index(max(lls))
    assert m.training_meta["restart_seeds"] == [component_seed(2, i) for i in range(6)]


def test_bagged_boosted_reductions():
    V, _ = two_families(4)
    one = bagged_boosted_hmm(V, HMM, 1, 1, 9, fraction=1.0)
    assert np.array_equal(one.score_matrix(V), train_hmm(V, {**HMM, "seed": 9}).score_matrix(V))
    five = bagged_boosted_hmm(V, HMM, 5, 1, 9, fraction=1.0)
    assert np.array_equal(five.score_matrix(V), hmm_random_restarts(V, HMM, 5, 9).score_matrix(V))


def test_bagged_boosted_manual_recombination():
    V, _ = two_families(5)
    ens = bagged_boosted_hmm(V, HMM, 3, 3, 11)
    assert isinstance(ens, EnsembleScorer) and len(ens.components) == 3
    manual = sum(c.score_matrix(V) for c in ens.components) / 3
    assert np.array_equal(ens.score_matrix(V), manual)
    idx = subset_indices(V.n, 3, 0.8, 11)
    for b, comp in enumerate(ens.components):
        again = hmm_random_restarts(V.select_columns(idx[b]), HMM, 3, component_seed(11, b))
        assert np.array_equal(comp.transmat, again.transmat)


# -- perceptron averaging


def test_one_perceptron_is_single():
    rng = numpy_rng(6)
    X = rng.normal(size=(30, 2))
    y = (X[:, 0] > 0).astype(int)
    p = {"epochs": 50, "learning_rate": 1.0}
    a = bagged_perceptron(fm(X), y, p, 1, 8)
    b = train_perceptron(fm(X), y, {**p, "init_seed": 8})
    assert np.array_equal(a.w, b.w) and a.b == b.b


def test_opposite_perceptrons_cancel():
    w = np.array([1.5, -2.0])
    with pytest.warns(DegenerateModel):
        avg = average_perceptrons([PerceptronModel(w, 0.5), PerceptronModel(-w, -0.5)])
    assert np.array_equal(avg.w, [0.0, 0.0])
    assert avg.training_meta["degenerate_margin"]


def test_averaged_perceptron_is_component_mean():
    rng = numpy_rng(7)
    X = rng.normal(size=(40, 3))
    y = (X @ [1.0, -1.0, 0.5] > 0).astype(int)
    m = bagged_perceptron(fm(X), y, {"epochs": 100, "learning_rate": 1.0}, 5, 1)
    comps = m.training_meta["components"]
    assert np.allclose(m.w, np.mean([c["w"] for c in comps], axis=0), rtol=1e-14)


# -- AdaBoost


def test_samme_trace_matches_exact_oracle():
    x, y = [1, 2, 3, 4], [0, 1, 1, 0]
    stumps, errors, alphas, preds = samme_trace(x, y, 2, 3)
    # frozen from the rational-arithmetic trace
    assert errors == [Fraction(1, 4), Fraction(1, 6), Fraction(1, 5)]
    assert alphas == pytest.approx([math.log(3), math.log(5), math.log(4)], rel=1e-15)
    model = adaboost(fm([[v] for v in x]), y, 3, 1.0, "SAMME", 2)
    assert model.alphas.tolist() == pytest.approx(alphas, rel=1e-12)
    assert model.training_meta["stage_errors"] == pytest.approx([float(e) for e in errors], abs=1e-15)
    got = [(None if s.feature < 0 else s.threshold, (s.left_class, s.right_class)) for s in model.stumps]
    assert got == [(None if t is None else float(t), c) for t, c in stumps]
    assert model.predict(fm([[v] for v in x])).tolist() == preds == [0, 1, 1, 0]


def test_separable_stops_at_stage_one():
    X = fm([[-2.0], [-1.0], [1.0], [2.0]])
    model = adaboost(X, [0, 0, 1, 1], 10, 1.0, "SAMME", 2)
    assert model.n_stages == 1
    assert model.training_meta["train_accuracy"] == [1.0]
    assert model.training_meta["stop_reason"] == "perfect_weak_learner"
    assert math.isfinite(model.alphas[0]) and model.alphas[0] > 0


def test_binary_alpha_is_classic():
    rng = numpy_rng(8)
    X = rng.random((40, 3))
    y = (X[:, 0] + 0.3 * rng.random(40) > 0.6).astype(int)
    model = adaboost(fm(X), y, 10, 1.0, "SAMME", 2)
    for err, alpha in zip(model.training_meta["stage_errors"], model.alphas):
        assert alpha == pytest.approx(math.log((1 - err) / err), rel=1e-12)


@pytest.mark.parametrize("pool", ["retrain", "fixed"])
def test_boosting_invariants(pool):
    rng = numpy_rng(9)
    X = rng.random((80, 4))
    y = np.digitize(X[:, 0] + X[:, 1] + 0.2 * rng.random(80), [0.7, 1.3])
    model = adaboost(fm(X), y, 25, 0.7, "SAMME", 3, pool)
    K = 3
    assert all(e < 1 - 1 / K for e in model.training_meta["stage_errors"])
    assert (model.alphas > 0).all()
    assert all(abs(s - 1.0) <= 1e-9 for s in model.training_meta["weight_sums"])
    if pool == "fixed":
        keys = [s.key for s in model.stumps]
        assert len(keys) == len(set(keys))


def test_separable_accuracy_non_decreasing():
    X = fm([[-2.0], [-1.0], [1.0], [2.0]])
    acc = adaboost(X, [0, 0, 1, 1], 5, 1.0, "SAMME", 2).training_meta["train_accuracy"]
    assert all(b >= a for a, b in zip(acc, acc[1:]))


def test_no_weak_learnability_at_stage_one():
    # identical inputs, balanced labels: no stump beats chance
    with pytest.raises(EnsembleError):
        adaboost(fm([[1.0], [1.0], [1.0], [1.0]]), [0, 1, 0, 1], 5, 1.0, "SAMME", 2)


def test_samme_r_rejected():
    with pytest.raises(ValueError):
        adaboost(fm([[0.0], [1.0]]), [0, 1], 2, 1.0, "SAMME.R", 2)


# -- stacks


def test_single_member_stack_is_member():
    V, y = two_families(6)
    member = per_class_classifier(EnsembleSpec("hmm", {k: v for k, v in HMM.items() if k != "seed"}, master_seed=1), V, y, 2)
    stack = build_voting_stack([member], 3)
    assert stack.predict(V).tolist() == member.predict(V).tolist()


class Fixed:
    n_classes = 2

    def __init__(self, labels):
        self.labels = np.asarray(labels)

    def predict(self, V):
        return self.labels


def test_majority_dominance():
    truth = numpy_rng(10).integers(0, 2, 50)
    stack = build_voting_stack([Fixed(truth), Fixed(1 - truth), Fixed(truth)], 0)
    assert np.mean(stack.predict(None) == truth) == 1.0


def test_stratified_folds_balance():
    labels = np.repeat([0, 1, 2], [10, 7, 13])
    folds = stratified_folds(labels, 5, 3)
    for k in range(3):
        counts = np.bincount(folds[labels == k], minlength=5)
        assert counts.max() - counts.min() <= 1


def tree_builder(V, labels):
    return train_tree(V, labels, {"max_depth": 3}, 3)


def test_out_of_fold_scores_never_see_their_row():
    rng = numpy_rng(11)
    X = rng.random((45, 3))
    y = np.repeat([0, 1, 2], 15)
    oof = out_of_fold_scores([tree_builder], fm(X), y, 5, 2)
    folds = stratified_folds(y, 5, 2)
    for f in range(5):
        test = folds == f
        model = tree_builder(fm(X[~test]), y[~test])
        assert np.array_equal(oof[test], model.class_scores(fm(X[test])))


def test_meta_stack_trains_and_predicts():
    rng = numpy_rng(12)
    X = rng.random((90, 3))
    y = np.digitize(X[:, 0], [0.33, 0.66])
    stack = build_meta_stack([tree_builder, tree_builder], fm(X), y, 3, n_folds=3, seed=1)
    assert np.mean(stack.predict(fm(X)) == y) > 0.8


# -- per-class and n-gram wrapping


def test_per_class_seeds():
    V, y = two_families(13)
    spec = EnsembleSpec("hmm", {k: v for k, v in HMM.items() if k != "seed"}, master_seed=21)
    clf = per_class_classifier(spec, V, y, 2)
    for k, model in enumerate(clf.per_class):
        assert model.params["seed"] == derive_seed(21, k)
        alone = train_hmm(V.select_columns(np.flatnonzero(y == k)), {**HMM, "seed": derive_seed(21, k)})
        assert np.array_equal(model.emissionprob, alone.emissionprob)


def test_ngram_view_projects_test_data():
    V, y = two_families(14)
    model = NgramView.fit(lambda X, lab: train_tree(X, lab, {"max_depth": 4}, 2), V, y, 2)
    test, yt = two_families(15)
    assert list(model.project(test).row_labels) == model.ngrams
    assert np.mean(model.predict(test) == yt) > 0.9


def test_component_failure_is_wrapped():
    V = fm([[0.0], [1.0], [2.0]])
    spec = EnsembleSpec("perceptron", {"epochs": 5, "learning_rate": 1.0}, count=2, bagging="samples",
                        sample_fraction=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EnsembleError):
            build_ensemble(spec, V, [0, 2, 1])
