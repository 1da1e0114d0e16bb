import json

import yaml

from ensemblekit.cli import main
from ensemblekit.data_io import read_manifest

SMALL = {
    "seed": 2,
    "data": {"synthetic": {"n_families": 2, "vocab_size": 5, "counts": [8, 8], "length": 50}, "min_len": 50},
    "experiments": [{"name": "HMM", "base": "hmm", "params": {"n_components": 2, "n_iter": 3}}],
}


def write(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return path


def test_run_prints_report(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", SMALL)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out"), "--no-models"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("Experiments")
    assert (tmp_path / "out" / "report.txt").read_text() == out


def test_empty_experiments_exit_code(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", {**SMALL, "experiments": []})
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 2
    assert "experiments" in capsys.readouterr().err


def test_invalid_yaml(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: [1,\n")
    assert main(["run", str(cfg)]) == 2
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2


def test_missing_corpus_directory(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", {**SMALL, "data": {"corpus": "nowhere"}})
    assert main(["run", str(cfg)]) == 2
    assert "data.corpus" in capsys.readouterr().err


def test_corpus_path_relative_to_config(tmp_path, capsys):
    spec = write(tmp_path / "spec.yaml", {"seed": 5, "n_families": 2, "vocab_size": 4, "counts": [6, 6], "length": 40})
    assert main(["generate", str(spec), "--out", str(tmp_path / "corpus")]) == 0
    seed, specs = read_manifest(tmp_path / "corpus")
    assert seed == 5 and [s.count for s in specs] == [6, 6]
    cfg = write(tmp_path / "c.yaml", {**SMALL, "data": {"corpus": "corpus", "min_len": 40}})
    assert main(["run", str(cfg), "--out", str(tmp_path / "out"), "--seed", "9"]) == 0
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["seed"] == 9


def test_grid_subcommand(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", {**SMALL, "grids": [{"family": "tree", "params": {"max_depth": [1, 2]}}]})
    assert main(["grid", str(cfg), "--out", str(tmp_path / "g")]) == 0
    assert capsys.readouterr().out.startswith("tree: best")
    assert (tmp_path / "g" / "grid_summary.json").exists()


def test_grid_without_grids(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", SMALL)
    assert main(["grid", str(cfg), "--out", str(tmp_path / "g")]) == 2


def test_bad_jobs(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", SMALL)
    assert main(["run", str(cfg), "--jobs", "0"]) == 2
