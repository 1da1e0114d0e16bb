"""Versioned JSON model files.

Every model file is a JSON object::

    {"format": "ensemblekit-model", "version": 1, "kind": "<class>",
     "state": {...}, "components": [{"file": "<stem>.c0.json"}, ...]}

Composite models (ensembles, stacks, per-class classifiers) are written as a
manifest whose components live in sibling files named ``<stem>.c<i>.json``,
recursively.  Keys are sorted and floats use their shortest round-trip
repr, so load followed by save reproduces the bytes exactly.
"""

import json
from pathlib import Path

import numpy as np

from .combiners import MetaCombiner
from .core import ArgmaxClassifier, ThresholdClassifier
from .ensembles import (BaggedClassifier, BoostedModel, EnsembleScorer, MetaStack, NgramView, RowProjection,
                        VotingStack)
from .scorers.hmm import HmmModel
from .scorers.perceptron import PerceptronModel
from .scorers.stump import StumpModel
from .scorers.tree import ForestModel, TreeModel

FORMAT = "ensemblekit-model"
VERSION = 1

KINDS = {
    cls.__name__: cls
    for cls in (
        HmmModel, PerceptronModel, TreeModel, ForestModel, StumpModel, BoostedModel,
        EnsembleScorer, BaggedClassifier, RowProjection, NgramView, VotingStack, MetaStack,
        ArgmaxClassifier, ThresholdClassifier, MetaCombiner,
    )
}


class ModelFormatError(Exception):
    pass


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(doc):
    return json.dumps(_plain(doc), indent=1, sort_keys=True, allow_nan=True) + "\n"


def save_model(model, path):
    """Write ``model`` (and its components) rooted at ``path``; returns written paths."""
    path = Path(path)
    kind = type(model).__name__
    if kind not in KINDS:
        raise ModelFormatError(f"no serializer for {kind}")
    state = dict(model.to_dict())
    children = state.pop("components", [])
    written = []
    refs = []
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    for i, child in enumerate(children):
        child_path = path.with_name(f"{stem}.c{i}.json")
        written += save_model(child, child_path)
        refs.append({"file": child_path.name})
    doc = {"format": FORMAT, "version": VERSION, "kind": kind, "state": state, "components": refs}
    path.write_text(dumps(doc), encoding="utf-8")
    return [path] + written


def load_model(path):
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise ModelFormatError(f"{path} is not a model file")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {doc.get('version')}")
    cls = KINDS.get(doc.get("kind"))
    if cls is None:
        raise ModelFormatError(f"{path}: unknown model kind {doc.get('kind')!r}")
    components = [load_model(path.with_name(ref["file"])) for ref in doc.get("components", [])]
    return cls.from_dict(doc["state"], components)
