"""Corpus loading, vocabulary, stratified splits, and synthetic opcode families.

On-disk layout: ``<root>/<family>/<sample>.txt``, each file holding
whitespace-separated opcode mnemonics.  Families and files are read in
lexicographic order.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import OTHER, Sample, Vocabulary
from .rng import derive_seed, numpy_rng

log = logging.getLogger(__name__)

MANIFEST_NAME = "synthetic_manifest.json"
MANIFEST_FORMAT = "ensemblekit-synthetic"
MANIFEST_VERSION = 1

OPCODES = (
    "mov", "push", "call", "pop", "cmp", "jz", "lea", "test", "jmp", "add",
    "jnz", "retn", "xor", "and", "sub", "inc", "dec", "or", "shl", "imul",
    "movzx", "shr", "nop", "sete", "leave", "sar", "sbb", "adc", "not", "neg",
)

DEFAULT_COUNTS = (50, 75, 100, 125, 150, 200, 200, 300)


class CorpusError(Exception):
    pass


@dataclass
class Corpus:
    """Raw mnemonic sequences read from a CorpusLayout directory."""

    families: list
    ids: list
    mnemonics: list
    labels: np.ndarray
    discarded: dict = field(default_factory=dict)

    def encode(self, vocab, indices=None):
        indices = range(len(self.ids)) if indices is None else indices
        return [Sample(self.ids[i], vocab.encode(self.mnemonics[i]), int(self.labels[i])) for i in indices]


def read_corpus(root, min_len=1000, truncate=1000):
    """Read every family directory; drop samples shorter than ``min_len``, truncate the rest."""
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a directory")
    families = sorted(p.name for p in root.iterdir() if p.is_dir())
    if len(families) < 2:
        raise CorpusError("corpus needs at least 2 family directories")
    ids, seqs, labels, discarded = [], [], [], {}
    kept_families = []
    for fam in families:
        files = sorted(p for p in (root / fam).iterdir() if p.is_file())
        dropped = 0
        kept = 0
        for path in files:
            try:
                tokens = path.read_text(encoding="utf-8").split()
            except (OSError, UnicodeDecodeError) as exc:
                raise CorpusError(f"cannot read {path}: {exc}") from exc
            if len(tokens) < min_len or not tokens:
                dropped += 1
                continue
            if truncate:
                tokens = tokens[:truncate]
            ids.append(f"{fam}/{path.name}")
            seqs.append(tokens)
            labels.append(len(kept_families))
            kept += 1
        discarded[fam] = dropped
        if kept:
            kept_families.append(fam)
        else:
            log.warning("family %s has no samples after filtering", fam)
    if not ids:
        raise CorpusError("corpus is empty after filtering")
    if len(kept_families) < 2:
        raise CorpusError("fewer than 2 families remain after filtering")
    return Corpus(kept_families, ids, seqs, np.array(labels, dtype=np.int64), discarded)


def load_corpus(root, min_len=1000, truncate=1000, vocab=None, max_vocab=None):
    """Read a corpus and encode it; the vocabulary is built from it unless given."""
    corpus = read_corpus(root, min_len, truncate)
    if vocab is None:
        vocab = Vocabulary.build(corpus.mnemonics, max_vocab)
    return corpus.encode(vocab), vocab, corpus


def write_discard_report(corpus, path):
    """``corpus`` is a Corpus or a family -> discarded-count mapping."""
    discarded = getattr(corpus, "discarded", corpus)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "discarded"])
        for fam, n in sorted(discarded.items()):
            w.writerow([fam, n])


def stratified_split_indices(labels, test_fraction, seed):
    """Per-class proportional split; returns sorted (train, test) index arrays."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    labels = np.asarray(labels)
    train, test = [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        if len(idx) < 2:
            raise ValueError(f"class {k} has fewer than 2 samples; cannot split")
        n_test = min(max(int(round(test_fraction * len(idx))), 1), len(idx) - 1)
        perm = numpy_rng(derive_seed(seed, int(k))).permutation(idx)
        test.extend(perm[:n_test])
        train.extend(perm[n_test:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def stratified_split(samples, test_fraction, seed):
    labels = [s.label for s in samples]
    tr, te = stratified_split_indices(labels, test_fraction, seed)
    return [samples[i] for i in tr], [samples[i] for i in te]


@dataclass
class SyntheticFamilySpec:
    """First-order Markov chain over a shared token alphabet."""

    name: str
    transition: list
    initial: list
    vocab_size: int
    length: int = 1000
    count: int = 1

    def validate(self):
        T = np.asarray(self.transition, dtype=np.float64)
        pi = np.asarray(self.initial, dtype=np.float64)
        V = self.vocab_size
        if T.shape != (V, V) or pi.shape != (V,):
            raise ValueError(f"family {self.name}: matrix shapes do not match vocab_size {V}")
        if (T < 0).any() or (pi < 0).any():
            raise ValueError(f"family {self.name}: negative probabilities")
        if not np.allclose(T.sum(axis=1), 1.0, atol=1e-9) or not math.isclose(pi.sum(), 1.0, abs_tol=1e-9):
            raise ValueError(f"family {self.name}: rows are not stochastic")
        if self.count < 1 or self.length < 1:
            raise ValueError(f"family {self.name}: count and length must be >= 1")
        return T, pi


def _draw(cum, u):
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def sample_markov_chain(transition, initial, count, length, rng):
    """(count, length) token matrix from a first-order chain."""
    T = np.asarray(transition, dtype=np.float64)
    cumT = np.cumsum(T, axis=1)
    cum0 = np.cumsum(np.asarray(initial, dtype=np.float64))[None, :]
    out = np.empty((count, length), dtype=np.int64)
    out[:, 0] = _draw(np.repeat(cum0, count, axis=0), rng.random(count))
    for t in range(1, length):
        out[:, t] = _draw(cumT[out[:, t - 1]], rng.random(count))
    return out


def sample_hmm_sequences(startprob, transmat, emissionprob, count, length, rng):
    """(count, length) observation matrix emitted by a discrete HMM."""
    cumA = np.cumsum(np.asarray(transmat, dtype=np.float64), axis=1)
    cumB = np.cumsum(np.asarray(emissionprob, dtype=np.float64), axis=1)
    cum0 = np.cumsum(np.asarray(startprob, dtype=np.float64))[None, :]
    states = _draw(np.repeat(cum0, count, axis=0), rng.random(count))
    obs = np.empty((count, length), dtype=np.int64)
    for t in range(length):
        if t:
            states = _draw(cumA[states], rng.random(count))
        obs[:, t] = _draw(cumB[states], rng.random(count))
    return obs


def mnemonic_names(vocab_size):
    names = list(OPCODES[:vocab_size])
    names += [f"op{i}" for i in range(len(names), vocab_size)]
    return names


def default_scene(seed, n_families=8, vocab_size=20, counts=DEFAULT_COUNTS, length=1000,
                  separation=0.25, concentration=0.5):
    """Imbalanced families that perturb one shared transition matrix.

    Family k's transition matrix is ``(1 - separation) * base + separation * own_k``
    with Dirichlet(concentration) rows; smaller ``separation`` makes the
    families harder to tell apart.
    """
    counts = list(counts)
    if len(counts) != n_families:
        counts = [int(round(c)) for c in np.linspace(50, 300, n_families)]
    rng = numpy_rng(derive_seed(seed, 0xB45E))
    alpha = np.full(vocab_size, concentration)
    base = rng.dirichlet(alpha, size=vocab_size)
    specs = []
    for k in range(n_families):
        own = rng.dirichlet(alpha, size=vocab_size)
        T = (1.0 - separation) * base + separation * own
        T /= T.sum(axis=1, keepdims=True)
        pi = rng.dirichlet(np.ones(vocab_size))
        specs.append(SyntheticFamilySpec(f"family{k:02d}", T.tolist(), pi.tolist(), vocab_size, length, counts[k]))
    return specs


def specs_from_config(cfg, seed):
    """Expand a synthetic-spec mapping into family specs.

    Either ``{"scene": "default", ...overrides}`` or
    ``{"families": [{name, transition, initial, length, count}, ...]}``.
    """
    if "families" in cfg:
        out = []
        for f in cfg["families"]:
            T = f["transition"]
            out.append(SyntheticFamilySpec(f["name"], T, f["initial"], len(T), f.get("length", 1000), f.get("count", 1)))
        return out
    scene = cfg.get("scene", "default")
    if scene != "default":
        raise ValueError(f"unknown synthetic scene {scene!r}")
    kw = {k: cfg[k] for k in ("n_families", "vocab_size", "counts", "length", "separation", "concentration") if k in cfg}
    return default_scene(seed, **kw)


def generate_synthetic(specs, seed, out_dir):
    """Write one Markov-chain corpus in the standard layout plus a manifest.

    Family k samples from ``numpy_rng(derive_seed(seed, k))``.  Returns the
    generated token-id matrices, one per family.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    generated = []
    for k, spec in enumerate(specs):
        T, pi = spec.validate()
        names = mnemonic_names(spec.vocab_size)
        tokens = sample_markov_chain(T, pi, spec.count, spec.length, numpy_rng(derive_seed(seed, k)))
        fam_dir = out_dir / spec.name
        fam_dir.mkdir(exist_ok=True)
        width = max(5, len(str(spec.count)))
        for i, row in enumerate(tokens):
            text = "\n".join(names[t] for t in row) + "\n"
            (fam_dir / f"sample_{i:0{width}d}.txt").write_text(text, encoding="utf-8")
        generated.append(tokens)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "seed": int(seed),
        "families": [asdict(s) for s in specs],
    }
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return generated


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("format") != MANIFEST_FORMAT:
        raise CorpusError(f"{path} is not a synthetic manifest")
    if data.get("version") != MANIFEST_VERSION:
        raise CorpusError(f"unsupported manifest version {data.get('version')}")
    return data["seed"], [SyntheticFamilySpec(**f) for f in data["families"]]


__all__ = [
    "OTHER", "Corpus", "CorpusError", "SyntheticFamilySpec", "Vocabulary", "default_scene",
    "generate_synthetic", "load_corpus", "read_corpus", "read_manifest", "sample_hmm_sequences",
    "sample_markov_chain", "specs_from_config", "stratified_split", "stratified_split_indices",
    "write_discard_report",
]
