"""Config-driven experiment runner and grid search."""

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import re
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .core import Vocabulary, build_feature_matrix
from .data_io import generate_synthetic, read_corpus, specs_from_config, stratified_split_indices, write_discard_report
from .ensembles import (EnsembleSpec, NgramView, build_ensemble, build_meta_stack, build_voting_stack,
                        per_class_classifier, stratified_folds)
from .combiners import majority_rows
from .metrics import ConfusionMatrix, compute_metrics, confusion, render_report
from .rng import derive_seed
from .scorers.tree import MAX_FEATURES
from .serialize import dumps, save_model

log = logging.getLogger(__name__)

RUN_MANIFEST_FORMAT = "ensemblekit-run"
RUN_MANIFEST_VERSION = 1

# best cells of the standard grids below; tol defaults to the smaller candidate
DEFAULT_PARAMS = {
    "hmm": {"n_components": 10, "n_iter": 200, "tol": 0.01},
    "forest": {"n_estimators": 800, "min_samples_split": 2, "min_samples_leaf": 1,
               "max_features": "auto", "max_depth": 40},
    "tree": {"max_depth": 40, "min_samples_split": 2, "min_samples_leaf": 1},
    "perceptron": {"epochs": 100, "learning_rate": 1.0},
    "stump": {},
}
DEFAULT_ADABOOST = {"n_estimators": 1000, "learning_rate": 1.0, "algorithm": "SAMME", "pool": "retrain"}

STANDARD_GRIDS = {
    "hmm": {"n_components": [1, 2, 5, 10], "n_iter": [50, 100, 200, 300, 500], "tol": [0.01, 0.5]},
    "forest": {
        "n_estimators": [100, 200, 300, 500, 800],
        "min_samples_split": [2, 5, 10, 15, 20],
        "min_samples_leaf": [1, 2, 5, 10, 15],
        "max_features": ["auto", "sqrt", "log2"],
        "max_depth": [30, 40, 50, 60, 70, 80],
    },
}
BOOSTING_GRIDS = {
    "adaboost": {
        "n_estimators": [100, 200, 300, 500, 800, 1000],
        "learning_rate": [0.5, 1.0, 1.5, 2.0],
        "algorithm": ["SAMME", "SAMME.R"],
    },
}

# Voting stacks by name.  Neural-network members are replaced by implemented
# analogs: CNN -> forest family, LSTM -> HMM family.
NAMED_STACKS = {
    "cnn": ["Random Forest", "Bagged forest"],
    "lstm": ["HMM", "Bagged HMM"],
    "bagged neural networks": ["Bagged HMM", "Bagged forest"],
    "classic": ["HMM restarts", "Bagged HMM", "Random Forest", "AdaBoost"],
    "all neural networks": ["Random Forest", "Bagged forest", "HMM", "Bagged HMM"],
    "all models": ["HMM", "HMM restarts", "Bagged HMM", "Random Forest", "Bagged forest", "AdaBoost"],
}

# per-family parameter domains: name -> predicate, description
_int_ge = lambda lo: (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= lo, f"integer >= {lo}")
_pos = (lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0, "number > 0")
PARAM_DOMAINS = {
    "hmm": {"n_components": _int_ge(1), "n_iter": _int_ge(1), "tol": _pos, "seed": _int_ge(0),
            "floor": (lambda v: isinstance(v, (int, float)) and 0 <= v < 1, "number in [0, 1)")},
    "forest": {"n_estimators": _int_ge(1), "min_samples_split": _int_ge(2), "min_samples_leaf": _int_ge(1),
               "max_features": (lambda v: v in MAX_FEATURES, f"one of {MAX_FEATURES}"),
               "max_depth": _int_ge(1), "seed": _int_ge(0)},
    "tree": {"max_depth": _int_ge(1), "min_samples_split": _int_ge(2), "min_samples_leaf": _int_ge(1)},
    "perceptron": {"epochs": _int_ge(1), "learning_rate": _pos, "init_seed": _int_ge(0)},
    "stump": {},
}


class ConfigError(Exception):
    """Config validation failure; ``problems`` lists ``path: message`` strings."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticConfig(_Strict):
    scene: str = "default"
    seed: Optional[int] = None
    n_families: int = Field(8, ge=2)
    vocab_size: int = Field(20, ge=1)
    counts: Optional[list[int]] = None
    length: int = Field(1000, ge=1)
    separation: float = Field(0.4, gt=0, le=1)
    concentration: float = Field(0.5, gt=0)


class DataConfig(_Strict):
    corpus: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None
    min_len: int = Field(1000, ge=1)
    truncate: int = Field(1000, ge=1)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    max_vocab: Optional[int] = Field(None, ge=2)


class BaggingConfig(_Strict):
    mode: Literal["none", "samples", "features", "both"] = "none"
    sample_fraction: float = Field(0.8, gt=0, le=1)
    feature_fraction: float = Field(1.0, gt=0, le=1)
    replace: bool = False


class BoostingConfig(_Strict):
    kind: Literal["none", "restarts", "adaboost", "weight-average"] = "none"
    restarts: int = Field(1, ge=1)
    n_estimators: Optional[int] = Field(None, ge=1)
    learning_rate: Optional[float] = Field(None, gt=0)
    algorithm: Optional[str] = None
    pool: Literal["retrain", "fixed"] = "retrain"


class ExperimentConfig(_Strict):
    name: str = Field(min_length=1)
    group: str = ""
    base: Optional[Literal["hmm", "perceptron", "tree", "forest", "stump"]] = None
    params: dict = Field(default_factory=dict)
    count: int = Field(1, ge=1)
    bagging: BaggingConfig = Field(default_factory=BaggingConfig)
    boosting: BoostingConfig = Field(default_factory=BoostingConfig)
    combiner: Literal["max", "average", "majority"] = "average"
    members: Optional[list[str]] = None
    stack: Optional[str] = None
    stacking: Literal["vote", "meta"] = "vote"
    normalizer: Literal["none", "zscore"] = "none"
    features: str = "histogram"
    seed: Optional[int] = None

    @property
    def ngram_order(self):
        """0 for the histogram view, n for ``ngram:n``."""
        if self.features == "histogram":
            return 0
        kind, _, n = self.features.partition(":")
        if kind != "ngram" or not n.isdigit() or int(n) < 1:
            raise ValueError(f"features must be 'histogram' or 'ngram:<n>', got {self.features!r}")
        return int(n)

    @property
    def is_stack(self):
        return self.members is not None or self.stack is not None

    def member_names(self):
        if self.members is not None:
            return list(self.members)
        return list(NAMED_STACKS[self.stack])


class GridConfig(_Strict):
    family: Literal["hmm", "forest", "tree", "perceptron", "adaboost"]
    params: dict[str, list] = Field(min_length=1)
    fixed: dict = Field(default_factory=dict)
    metric: Literal["accuracy", "balanced_accuracy", "precision", "recall", "f1"] = "balanced_accuracy"
    protocol: Literal["holdout", "kfold"] = "holdout"
    validation_fraction: float = Field(0.2, gt=0, lt=1)
    folds: int = Field(3, ge=2)
    features: str = "histogram"


class RunConfig(_Strict):
    seed: int = 0
    data: DataConfig
    experiments: list[ExperimentConfig] = Field(default_factory=list)
    grids: list[GridConfig] = Field(default_factory=list)
    averaging: Literal["weighted", "macro", "both"] = "weighted"
    meta_folds: int = Field(5, ge=2)
    output: Optional[str] = None


def _loc(loc):
    return ".".join(str(p) for p in loc)


def _check_params(family, params, path, problems):
    domains = PARAM_DOMAINS[family]
    for key, value in params.items():
        if key not in domains:
            problems.append(f"{path}.{key}: unknown parameter for {family}")
            continue
        ok, desc = domains[key]
        if not ok(value):
            problems.append(f"{path}.{key}: {value!r} is not {desc}")


def validate_config(raw, require_experiments=True, base_dir=None):
    """Parse a raw mapping into RunConfig or raise ConfigError with field paths."""
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError([f"{_loc(e['loc'])}: {e['msg']}" for e in exc.errors()]) from None
    problems = []
    d = cfg.data
    if (d.corpus is None) == (d.synthetic is None):
        problems.append("data: give exactly one of 'corpus' or 'synthetic'")
    if d.corpus is not None:
        root = Path(d.corpus)
        if not root.is_absolute() and base_dir is not None:
            root = Path(base_dir) / root
        if not root.is_dir():
            problems.append(f"data.corpus: directory {d.corpus} does not exist")
        else:
            d.corpus = str(root)
    if d.synthetic is not None and d.synthetic.scene != "default":
        problems.append(f"data.synthetic.scene: unknown scene {d.synthetic.scene!r}")
    if require_experiments and not cfg.experiments:
        problems.append("experiments: at least one experiment is required")
    names = [e.name for e in cfg.experiments]
    for i, e in enumerate(cfg.experiments):
        path = f"experiments.{i}"
        if names.count(e.name) > 1:
            problems.append(f"{path}.name: duplicate experiment name {e.name!r}")
        if e.is_stack:
            if e.members is not None and e.stack is not None:
                problems.append(f"{path}: give either 'members' or 'stack', not both")
                continue
            if e.stack is not None and e.stack not in NAMED_STACKS:
                problems.append(f"{path}.stack: unknown stack {e.stack!r}; known: {sorted(NAMED_STACKS)}")
                continue
            members = e.member_names()
            if not members:
                problems.append(f"{path}.members: a stack needs at least one member")
            for m in members:
                if m not in names:
                    problems.append(f"{path}.members: unknown experiment {m!r}")
                elif next(x for x in cfg.experiments if x.name == m).is_stack:
                    problems.append(f"{path}.members: {m!r} is itself a stack")
            continue
        if e.base is None:
            problems.append(f"{path}.base: required for non-stack experiments")
            continue
        _check_params(e.base, e.params, f"{path}.params", problems)
        try:
            experiment_spec(e, 0)
        except ValueError as exc:
            problems.append(f"{path}: {exc}")
        try:
            if e.ngram_order and e.base == "hmm":
                problems.append(f"{path}.features: hmm scorers consume the sequence view directly")
        except ValueError as exc:
            problems.append(f"{path}.features: {exc}")
        if e.boosting.kind == "adaboost" and (e.boosting.algorithm or "SAMME") != "SAMME":
            problems.append(f"{path}.boosting.algorithm: only SAMME is supported")
    for i, g in enumerate(cfg.grids):
        fam = "stump" if g.family == "adaboost" else g.family
        for key, values in g.params.items():
            if not values:
                problems.append(f"grids.{i}.params.{key}: empty candidate list")
        if fam != "stump":
            _check_params(fam, g.fixed, f"grids.{i}.fixed", problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return raw


def name_key(name):
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


def experiment_seed(run_seed, exp):
    return exp.seed if exp.seed is not None else derive_seed(run_seed, name_key(exp.name))


def experiment_spec(exp, seed):
    params = {**DEFAULT_PARAMS[exp.base], **exp.params}
    if exp.base == "forest":
        params.setdefault("seed", seed)
    ada = {}
    if exp.boosting.kind == "adaboost":
        ada = dict(DEFAULT_ADABOOST)
        for key in ("n_estimators", "learning_rate", "algorithm"):
            value = getattr(exp.boosting, key)
            if value is not None:
                ada[key] = value
        ada["pool"] = exp.boosting.pool
    count = exp.count
    restarts = 1
    if exp.boosting.kind == "restarts" and exp.bagging.mode != "none":
        restarts = exp.boosting.restarts
    return EnsembleSpec(
        base=exp.base,
        params=params,
        count=count,
        bagging=exp.bagging.mode,
        sample_fraction=exp.bagging.sample_fraction,
        feature_fraction=exp.bagging.feature_fraction,
        replace=exp.bagging.replace,
        boosting=exp.boosting.kind,
        restarts=restarts,
        combiner=exp.combiner,
        master_seed=seed,
        adaboost=ada,
    )


@dataclass
class Builder:
    """Picklable ``(V, labels) -> Classifier`` for one experiment."""

    spec: EnsembleSpec
    n_classes: int
    normalizer: str = "none"
    ngram_order: int = 0

    def __call__(self, V, labels):
        if self.ngram_order:
            return NgramView.fit(self.build, V, labels, self.ngram_order)
        return self.build(V, labels)

    def build(self, V, labels):
        if self.spec.returns_scorer:
            return per_class_classifier(self.spec, V, labels, self.n_classes, self.normalizer,
                                        derive_seed(self.spec.master_seed, 0x71E))
        return build_ensemble(self.spec, V, labels, self.n_classes)


def slug(name):
    s = re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()
    return s or "experiment"


def _children(model):
    for attr in ("per_class", "components", "members"):
        for c in getattr(model, attr, None) or []:
            yield c
    inner = getattr(model, "model", None)
    if inner is not None:
        yield inner


def training_curves(model, path="root"):
    """Rows (component path, step, metric, value) from HMM and boosting histories."""
    rows = []
    meta = getattr(model, "training_meta", {}) or {}
    for step, ll in enumerate(meta.get("loglik_history", [])):
        rows.append((path, step, "loglik", ll))
    if "stage_errors" in meta:
        for step, (err, alpha, acc) in enumerate(zip(meta["stage_errors"], model.alphas, meta["train_accuracy"])):
            rows += [(path, step, "stage_error", err), (path, step, "alpha", float(alpha)),
                     (path, step, "train_accuracy", acc)]
    for i, child in enumerate(_children(model)):
        rows += training_curves(child, f"{path}.{i}")
    return rows


def _curves_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["component", "step", "metric", "value"])
    for r in rows:
        w.writerow([r[0], r[1], r[2], repr(float(r[3]))])
    return buf.getvalue()


@dataclass
class Dataset:
    train: object
    test: object
    y_train: np.ndarray
    y_test: np.ndarray
    families: list
    vocab: Vocabulary
    discarded: dict = field(default_factory=dict)


def prepare_data(cfg, out_dir):
    """Materialize (or read) the corpus, split it, build the vocabulary from the training side."""
    d = cfg.data
    if d.synthetic is not None:
        syn = d.synthetic
        gen_seed = syn.seed if syn.seed is not None else cfg.seed
        root = Path(out_dir) / "corpus"
        if root.exists():
            shutil.rmtree(root)
        specs = specs_from_config(syn.model_dump(exclude_none=True), gen_seed)
        generate_synthetic(specs, gen_seed, root)
    else:
        root = Path(d.corpus)
    corpus = read_corpus(root, d.min_len, d.truncate)
    tr, te = stratified_split_indices(corpus.labels, d.test_fraction, derive_seed(cfg.seed, 1))
    vocab = Vocabulary.build([corpus.mnemonics[i] for i in tr], d.max_vocab)
    train = build_feature_matrix(corpus.encode(vocab, tr), vocab.size, "sequence")
    test = build_feature_matrix(corpus.encode(vocab, te), vocab.size, "sequence")
    return Dataset(train, test, corpus.labels[tr], corpus.labels[te], corpus.families, vocab, corpus.discarded)


def _train_job(args):
    name, builder, train, y_train, test = args
    model = builder(train, y_train)
    return name, model, model.predict(test)


def _map(fn, jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))


@dataclass
class RunResult:
    out_dir: Path
    reports: dict
    confusions: dict
    predictions: dict
    models: dict


def run(config, out_dir=None, jobs=1, seed=None, base_dir=None, save_models=True):
    """Train and evaluate every experiment on one shared split and write the outputs.

    ``config`` is a raw mapping or a RunConfig.  ``seed`` overrides the
    config's master seed.
    """
    if isinstance(config, dict):
        if seed is not None:
            config = {**config, "seed": seed}
        cfg = validate_config(config, base_dir=base_dir)
    else:
        cfg = config if seed is None else config.model_copy(update={"seed": seed})
    out = Path(out_dir or cfg.output or "results")
    out.mkdir(parents=True, exist_ok=True)
    handler = _run_log(out / "run.log")
    try:
        return _run(cfg, out, jobs, save_models)
    finally:
        logging.getLogger("ensemblekit").removeHandler(handler)
        handler.close()


def _run_log(path):
    # no timestamps: the log is part of the deterministic output
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("ensemblekit")
    root.addHandler(handler)
    if root.level == logging.NOTSET or root.level > logging.INFO:
        root.setLevel(logging.INFO)
    return handler


def _run(cfg, out, jobs, save_models):
    data = prepare_data(cfg, out)
    K = len(data.families)
    log.info("data: %d train / %d test samples, %d families, vocabulary %d",
             data.train.n, data.test.n, K, data.vocab.size)

    seeds = {e.name: experiment_seed(cfg.seed, e) for e in cfg.experiments}
    builders = {
        e.name: Builder(experiment_spec(e, seeds[e.name]), K, e.normalizer, e.ngram_order)
        for e in cfg.experiments if not e.is_stack
    }
    base_jobs = [(name, b, data.train, data.y_train, data.test) for name, b in builders.items()]
    models, predictions = {}, {}
    for name, model, pred in _map(_train_job, base_jobs, jobs):
        models[name], predictions[name] = model, pred
        log.info("trained %s", name)

    for e in cfg.experiments:
        if not e.is_stack:
            continue
        names = e.member_names()
        tie_seed = derive_seed(seeds[e.name], 0x71E)
        if e.stacking == "vote":
            models[e.name] = build_voting_stack([models[n] for n in names], tie_seed, names)
            votes = np.column_stack([predictions[n] for n in names])
            predictions[e.name] = majority_rows(votes, K, tie_seed)
        else:
            stack = build_meta_stack([builders[n] for n in names], data.train, data.y_train, K,
                                     cfg.meta_folds, seeds[e.name], names)
            models[e.name] = stack
            predictions[e.name] = stack.predict(data.test)
        log.info("stacked %s over %s", e.name, ", ".join(names))

    reports, macro, confusions = {}, {}, {}
    groups = {e.name: e.group for e in cfg.experiments}
    files = []
    for e in cfg.experiments:
        cm = confusion(data.y_test, predictions[e.name], K, data.families)
        confusions[e.name] = cm
        reports[e.name] = compute_metrics(cm, "macro" if cfg.averaging == "macro" else "weighted")
        if cfg.averaging == "both":
            macro[e.name] = compute_metrics(cm, "macro")
        s = slug(e.name)
        _write(out / f"confusion_{s}.csv", cm.to_csv(), files)
        curves = training_curves(models[e.name])
        if curves:
            _write(out / f"curve_{s}.csv", _curves_csv(curves), files)
        if save_models:
            mdir = out / "models"
            mdir.mkdir(exist_ok=True)
            files += [str(p.relative_to(out)) for p in save_model(models[e.name], mdir / f"{s}.json")]

    text, table_csv, bar_csv = render_report(reports, groups)
    _write(out / "report.txt", text, files)
    _write(out / "report.csv", table_csv, files)
    _write(out / "bar.csv", bar_csv, files)
    if macro:
        text_m, csv_m, _ = render_report(macro, groups)
        _write(out / "report_macro.txt", text_m, files)
        _write(out / "report_macro.csv", csv_m, files)
    if data.discarded:
        write_discard_report(data.discarded, out / "discarded.csv")
        files.append("discarded.csv")

    manifest = {
        "format": RUN_MANIFEST_FORMAT,
        "version": RUN_MANIFEST_VERSION,
        "seed": cfg.seed,
        "config": cfg.model_dump(mode="json"),
        "families": data.families,
        "vocabulary": list(data.vocab.tokens),
        "split": {"train": int(data.train.n), "test": int(data.test.n)},
        "experiment_seeds": seeds,
        "files": sorted(files),
    }
    (out / "manifest.json").write_text(dumps(manifest), encoding="utf-8")
    for name, rep in reports.items():
        log.info("%s: balanced accuracy %.4f", name, rep.balanced_accuracy)
    return RunResult(out, reports, confusions, predictions, models)


def _write(path, text, files):
    path.write_text(text, encoding="utf-8")
    files.append(path.name)


# -- grid search ----------------------------------------------------------


def grid_cells(params):
    """Every combination in lexicographic grid order (first parameter varies slowest)."""
    keys = list(params)
    return [dict(zip(keys, values)) for values in itertools.product(*(params[k] for k in keys))]


def _grid_experiment(grid, cell):
    if grid.family == "adaboost":
        boosting = {"kind": "adaboost", **{k: v for k, v in cell.items()}}
        return ExperimentConfig(name="grid", base="stump", boosting=boosting, params=dict(grid.fixed),
                                features=grid.features)
    return ExperimentConfig(name="grid", base=grid.family, params={**grid.fixed, **cell}, features=grid.features)


def check_cell(grid, cell):
    """Raise ValueError if the combination cannot be trained."""
    try:
        exp = _grid_experiment(grid, cell)
    except ValidationError as exc:
        raise ValueError("; ".join(f"{_loc(e['loc'])}: {e['msg']}" for e in exc.errors())) from None
    problems = []
    if exp.base != "stump":
        _check_params(exp.base, exp.params, "params", problems)
    try:
        exp.ngram_order
    except ValueError as e:
        problems.append(str(e))
    if exp.boosting.kind == "adaboost" and (exp.boosting.algorithm or "SAMME") != "SAMME":
        problems.append(f"algorithm {exp.boosting.algorithm!r} is not supported (hard-label stumps)")
    if problems:
        raise ValueError("; ".join(problems))
    return exp


def _evaluate_cell(args):
    grid, cell, V, labels, K, seed = args
    exp = check_cell(grid, cell)
    builder = Builder(experiment_spec(exp, seed), K, ngram_order=exp.ngram_order)
    if grid.protocol == "holdout":
        tr, va = stratified_split_indices(labels, grid.validation_fraction, derive_seed(seed, 2))
        splits = [(tr, va)]
    else:
        folds = stratified_folds(labels, grid.folds, derive_seed(seed, 3))
        splits = [(np.flatnonzero(folds != f), np.flatnonzero(folds == f)) for f in range(grid.folds)]
    counts = np.zeros((K, K), dtype=np.int64)
    for tr, va in splits:
        model = builder(V.select_columns(tr), labels[tr])
        counts += confusion(labels[va], model.predict(V.select_columns(va)), K).counts
    rep = compute_metrics(ConfusionMatrix(counts))
    return {c: getattr(rep, c) for c in ("accuracy", "balanced_accuracy", "precision", "recall", "f1")}


@dataclass
class GridResult:
    best: Optional[dict]
    best_score: float
    rows: list
    skipped: list

    @property
    def evaluated(self):
        return len(self.rows)


def grid_search(grid, V=None, labels=None, n_classes=None, seed=0, evaluate=None, jobs=1):
    """Evaluate every grid cell; the best cell by ``grid.metric`` wins, first in grid order on ties.

    ``evaluate(cell) -> dict of metrics`` replaces the default
    train-and-validate evaluation.  Cells that raise ValueError are
    infeasible: skipped and counted.
    """
    cells = grid_cells(grid.params)
    rows, skipped = [], []
    if evaluate is None:
        feasible = []
        for cell in cells:
            try:
                check_cell(grid, cell)
                feasible.append(cell)
            except ValueError as exc:
                skipped.append((cell, str(exc)))
        labels = np.asarray(labels, dtype=np.int64)
        K = n_classes or int(labels.max()) + 1
        results = _map(_evaluate_cell, [(grid, c, V, labels, K, seed) for c in feasible], jobs)
        rows = [(c, r) for c, r in zip(feasible, results)]
    else:
        for cell in cells:
            try:
                rows.append((cell, evaluate(cell)))
            except ValueError as exc:
                skipped.append((cell, str(exc)))
    best, best_score = None, -math.inf
    for cell, res in rows:
        if res[grid.metric] > best_score:
            best, best_score = cell, res[grid.metric]
    return GridResult(best, best_score, rows, skipped)


def grid_csv(grid, result):
    keys = list(grid.params)
    metrics = ["accuracy", "balanced_accuracy", "precision", "recall", "f1"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys + metrics)
    for cell, res in result.rows:
        w.writerow([cell[k] for k in keys] + [f"{res[m]:.6f}" for m in metrics])
    skipped = io.StringIO()
    ws = csv.writer(skipped, lineterminator="\n")
    ws.writerow(keys + ["reason"])
    for cell, reason in result.skipped:
        ws.writerow([cell[k] for k in keys] + [reason])
    return buf.getvalue(), skipped.getvalue()


def run_grids(config, out_dir=None, jobs=1, seed=None, base_dir=None):
    """Grid search every ``grids`` entry on the training split; writes ``grid_<family>.csv``."""
    if isinstance(config, dict):
        if seed is not None:
            config = {**config, "seed": seed}
        cfg = validate_config(config, require_experiments=False, base_dir=base_dir)
    else:
        cfg = config
    if not cfg.grids:
        raise ConfigError(["grids: at least one grid is required"])
    out = Path(out_dir or cfg.output or "results")
    out.mkdir(parents=True, exist_ok=True)
    data = prepare_data(cfg, out)
    K = len(data.families)
    summary = {}
    for i, grid in enumerate(cfg.grids):
        res = grid_search(grid, data.train, data.y_train, K, derive_seed(cfg.seed, 0x6A1D, i), jobs=jobs)
        table, skipped = grid_csv(grid, res)
        (out / f"grid_{grid.family}.csv").write_text(table, encoding="utf-8")
        if res.skipped:
            (out / f"grid_{grid.family}_skipped.csv").write_text(skipped, encoding="utf-8")
        summary[grid.family] = {
            "best": res.best,
            "metric": grid.metric,
            "best_score": res.best_score,
            "evaluated": res.evaluated,
            "infeasible": len(res.skipped),
        }
    (out / "grid_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return summary
