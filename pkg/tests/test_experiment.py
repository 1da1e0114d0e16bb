import copy
import json

import numpy as np
import pytest

from ensemblekit.experiment import (
    NAMED_STACKS, STANDARD_GRIDS, ConfigError, GridConfig, check_cell, grid_cells, grid_search, run, run_grids,
    validate_config,
)

DATA = {"synthetic": {"n_families": 3, "vocab_size": 6, "counts": [10, 12, 14], "length": 80, "separation": 0.6},
        "min_len": 60, "truncate": 60}
HMM = {"n_components": 2, "n_iter": 5}
MEMBERS = [
    {"name": "HMM", "base": "hmm", "params": HMM},
    {"name": "HMM restarts", "base": "hmm", "params": HMM, "count": 2, "boosting": {"kind": "restarts"}},
    {"name": "Bagged HMM", "base": "hmm", "params": HMM, "count": 2, "bagging": {"mode": "samples"}},
    {"name": "Random Forest", "base": "forest", "features": "ngram:2", "params": {"n_estimators": 5}},
    {"name": "Bagged forest", "base": "forest", "params": {"n_estimators": 3}, "count": 2,
     "bagging": {"mode": "samples"}, "combiner": "majority"},
    {"name": "AdaBoost", "base": "stump", "boosting": {"kind": "adaboost", "n_estimators": 5}},
]


def config(**kw):
    cfg = {"seed": 3, "data": copy.deepcopy(DATA), "experiments": copy.deepcopy(MEMBERS)}
    cfg.update(kw)
    return cfg


def problems(raw):
    with pytest.raises(ConfigError) as info:
        validate_config(raw)
    return info.value.problems


# -- validation


def test_missing_experiments():
    assert any(p.startswith("experiments") for p in problems(config(experiments=[])))


def test_bad_param_value_has_path():
    raw = config()
    raw["experiments"][0]["params"] = {"n_components": 0}
    assert "experiments.0.params.n_components: 0 is not integer >= 1" in problems(raw)


def test_unknown_field_has_path():
    raw = config()
    raw["experiments"][1]["colour"] = "red"
    assert any(p.startswith("experiments.1.colour") for p in problems(raw))


def test_type_error_has_path():
    raw = config()
    raw["data"]["test_fraction"] = "lots"
    assert any(p.startswith("data.test_fraction") for p in problems(raw))


def test_stack_member_checks():
    raw = config(experiments=MEMBERS + [{"name": "S", "members": ["HMM", "Nope"]}])
    assert "experiments.6.members: unknown experiment 'Nope'" in problems(raw)
    raw = config(experiments=MEMBERS + [{"name": "S", "stack": "bogus"}])
    assert problems(raw)[0].startswith("experiments.6.stack")


def test_samme_r_rejected():
    raw = config()
    raw["experiments"][5]["boosting"]["algorithm"] = "SAMME.R"
    assert "experiments.5.boosting.algorithm: only SAMME is supported" in problems(raw)


def test_exactly_one_data_source():
    raw = config()
    raw["data"]["corpus"] = "somewhere"
    assert any(p.startswith("data") for p in problems(raw))


def test_hmm_rejects_ngram_features():
    raw = config()
    raw["experiments"][0]["features"] = "ngram:2"
    assert any("features" in p for p in problems(raw))


# -- grids


def test_forest_grid_size():
    grid = GridConfig(family="forest", params=STANDARD_GRIDS["forest"])
    seen = []
    res = grid_search(grid, evaluate=lambda cell: seen.append(cell) or {"balanced_accuracy": 0.5})
    assert res.evaluated == len(seen) == 2250 == len(grid_cells(grid.params))
    assert res.best == seen[0]


def test_planted_best_cell():
    grid = GridConfig(family="hmm", params=STANDARD_GRIDS["hmm"])
    target = {"n_components": 5, "n_iter": 200, "tol": 0.5}
    res = grid_search(grid, evaluate=lambda c: {"balanced_accuracy": 0.9 if c == target else 0.4})
    assert res.best == target and res.best_score == 0.9


def test_ties_keep_first_cell():
    grid = GridConfig(family="tree", params={"max_depth": [3, 1, 2]})
    res = grid_search(grid, evaluate=lambda c: {"balanced_accuracy": 0.7 if c["max_depth"] < 3 else 0.6})
    assert res.best == {"max_depth": 1}


def test_infeasible_cells_are_skipped():
    grid = GridConfig(family="adaboost", params={"n_estimators": [5], "algorithm": ["SAMME", "SAMME.R"]})
    with pytest.raises(ValueError):
        check_cell(grid, {"n_estimators": 5, "algorithm": "SAMME.R"})

    def evaluate(cell):
        check_cell(grid, cell)
        return {"balanced_accuracy": 0.5}

    res = grid_search(grid, evaluate=evaluate)
    assert res.evaluated == 1 and len(res.skipped) == 1


def test_single_cell_grid_trains(tmp_path):
    raw = config(experiments=[], grids=[{"family": "tree", "params": {"max_depth": [2]}}])
    summary = run_grids(raw, tmp_path)
    assert summary["tree"]["best"] == {"max_depth": 2} and summary["tree"]["evaluated"] == 1
    assert (tmp_path / "grid_tree.csv").read_text().count("\n") == 2


# -- runs


@pytest.fixture(scope="module")
def stacked_run(tmp_path_factory):
    stacks = [{"name": f"stack {name}", "stack": name} for name in NAMED_STACKS]
    stacks.append({"name": "meta", "members": ["HMM", "AdaBoost"], "stacking": "meta"})
    out = tmp_path_factory.mktemp("run")
    return run(config(experiments=MEMBERS + stacks, averaging="both", meta_folds=2), out)


def test_named_stacks_constructible(stacked_run):
    for name, members in NAMED_STACKS.items():
        stack = stacked_run.models[f"stack {name}"]
        assert stack.names == members
        assert len(stacked_run.predictions[f"stack {name}"]) == len(stacked_run.predictions["HMM"])


def test_run_outputs(stacked_run):
    out = stacked_run.out_dir
    manifest = json.loads((out / "manifest.json").read_text())
    for f in manifest["files"]:
        assert (out / f).exists()
    for f in ("report.txt", "report.csv", "bar.csv", "report_macro.txt", "confusion_hmm.csv", "curve_adaboost.csv",
              "models/meta.json", "run.log"):
        assert (out / f).exists(), f
    rows = (out / "report.csv").read_text().splitlines()
    assert len(rows) == 1 + len(stacked_run.reports)
    cm = stacked_run.confusions["HMM"].counts
    assert cm.sum() == len(stacked_run.predictions["HMM"])


def test_run_deterministic_across_jobs(tmp_path):
    raw = config(experiments=MEMBERS[:4] + [{"name": "Vote", "members": ["HMM", "Random Forest", "Bagged HMM"]}])
    a = run(raw, tmp_path / "a", jobs=1)
    b = run(raw, tmp_path / "b", jobs=2)
    for name in ("report.txt", "report.csv", "confusion_vote.csv", "manifest.json", "models/bagged_hmm.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert all(np.array_equal(a.predictions[k], b.predictions[k]) for k in a.predictions)


def test_seed_override_changes_split(tmp_path):
    raw = config(experiments=MEMBERS[:1])
    run(raw, tmp_path / "a", seed=1, save_models=False)
    run(raw, tmp_path / "b", seed=2, save_models=False)
    assert not (tmp_path / "a" / "models").exists()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["seed"] == 1 and mb["seed"] == 2
    assert ma["experiment_seeds"] != mb["experiment_seeds"]
