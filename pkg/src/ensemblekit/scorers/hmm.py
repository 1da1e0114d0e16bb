"""Discrete-observation hidden Markov model trained by Baum-Welch.

Forward-backward runs with per-position scaling, so 1000-token sequences
stay finite.  The M-step is the exact maximizer of the expected complete
log-likelihood under the constraint that every probability is at least
``floor``; EM therefore stays monotone even with the floor in place.
"""

import numpy as np
from numba import njit

from ..core import ParamSet, Scorer
from ..rng import numpy_rng

DEFAULT_FLOOR = 1e-10


@njit(cache=True)
def _forward_backward(startprob, transmat, emission, obs, offsets, want_stats):
    n_states = startprob.shape[0]
    n_symbols = emission.shape[1]
    start_acc = np.zeros(n_states)
    trans_acc = np.zeros((n_states, n_states))
    emit_acc = np.zeros((n_states, n_symbols))
    n_seq = offsets.shape[0] - 1
    logliks = np.zeros(n_seq)
    for s in range(n_seq):
        lo = offsets[s]
        T = offsets[s + 1] - lo
        alpha = np.empty((T, n_states))
        scale = np.empty(T)
        total = 0.0
        for i in range(n_states):
            alpha[0, i] = startprob[i] * emission[i, obs[lo]]
            total += alpha[0, i]
        scale[0] = total
        if total <= 0.0:
            logliks[s] = -np.inf
            continue
        for i in range(n_states):
            alpha[0, i] /= total
        ll = np.log(total)
        dead = False
        for t in range(1, T):
            o = obs[lo + t]
            total = 0.0
            for j in range(n_states):
                acc = 0.0
                for i in range(n_states):
                    acc += alpha[t - 1, i] * transmat[i, j]
                alpha[t, j] = acc * emission[j, o]
                total += alpha[t, j]
            scale[t] = total
            if total <= 0.0:
                dead = True
                break
            for j in range(n_states):
                alpha[t, j] /= total
            ll += np.log(total)
        if dead:
            logliks[s] = -np.inf
            continue
        logliks[s] = ll
        if not want_stats:
            continue

        beta = np.empty((T, n_states))
        for i in range(n_states):
            beta[T - 1, i] = 1.0
        for t in range(T - 2, -1, -1):
            o = obs[lo + t + 1]
            for i in range(n_states):
                acc = 0.0
                for j in range(n_states):
                    acc += transmat[i, j] * emission[j, o] * beta[t + 1, j]
                beta[t, i] = acc / scale[t + 1]

        for i in range(n_states):
            start_acc[i] += alpha[0, i] * beta[0, i]
        for t in range(T):
            o = obs[lo + t]
            for i in range(n_states):
                emit_acc[i, o] += alpha[t, i] * beta[t, i]
        for t in range(T - 1):
            o = obs[lo + t + 1]
            c = scale[t + 1]
            for i in range(n_states):
                a = alpha[t, i]
                for j in range(n_states):
                    trans_acc[i, j] += a * transmat[i, j] * emission[j, o] * beta[t + 1, j] / c
    return logliks, start_acc, trans_acc, emit_acc


def pack_sequences(sequences):
    sequences = [np.asarray(s, dtype=np.int64) for s in sequences]
    if not sequences or any(len(s) == 0 for s in sequences):
        raise ValueError("HMM needs non-empty sequences")
    offsets = np.zeros(len(sequences) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(s) for s in sequences])
    return np.concatenate(sequences), offsets


def project_floor(counts, floor):
    """Maximize sum(c * log p) over distributions p with every p_j >= floor."""
    counts = np.asarray(counts, dtype=np.float64)
    size = len(counts)
    if floor * size > 1.0:
        raise ValueError("floor too large for this many outcomes")
    pinned = np.zeros(size, dtype=bool)
    while True:
        free = ~pinned
        total = counts[free].sum()
        mass = 1.0 - floor * pinned.sum()
        if total <= 0.0:
            p = np.where(pinned, floor, mass / free.sum())
            break
        p = counts * (mass / total)
        newly = free & (p < floor)
        if not newly.any():
            p[pinned] = floor
            break
        pinned |= newly
    return p / p.sum()


def _project_rows(counts, floor):
    return np.vstack([project_floor(row, floor) for row in np.atleast_2d(counts)])


class HmmModel(Scorer):
    family = "hmm"
    input_kind = "sequence"

    def __init__(self, startprob, transmat, emissionprob, params=None, training_meta=None):
        self.startprob = np.ascontiguousarray(startprob, dtype=np.float64)
        self.transmat = np.ascontiguousarray(transmat, dtype=np.float64)
        self.emissionprob = np.ascontiguousarray(emissionprob, dtype=np.float64)
        self.params = ParamSet(params or {})
        self.training_meta = dict(training_meta or {})

    @property
    def n_components(self):
        return len(self.startprob)

    @property
    def vocab_size(self):
        return self.emissionprob.shape[1]

    @property
    def train_loglik(self):
        return self.training_meta.get("train_loglik")

    @property
    def iters_run(self):
        return self.training_meta.get("iters_run")

    def loglik_many(self, sequences):
        obs, offsets = pack_sequences(sequences)
        if obs.min() < 0 or obs.max() >= self.vocab_size:
            raise ValueError("token outside the model vocabulary")
        ll, *_ = _forward_backward(self.startprob, self.transmat, self.emissionprob, obs, offsets, False)
        return ll

    def score(self, x):
        return float(self.loglik_many([x])[0])

    def score_matrix(self, V):
        return self.loglik_many(self.inputs(V))

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "training_meta": self.training_meta,
            "startprob": self.startprob.tolist(),
            "transmat": self.transmat.tolist(),
            "emissionprob": self.emissionprob.tolist(),
        }

    @classmethod
    def from_dict(cls, d, components=()):
        return cls(d["startprob"], d["transmat"], d["emissionprob"], d["params"], d["training_meta"])


def random_hmm(n_components, vocab_size, seed, floor=DEFAULT_FLOOR):
    rng = numpy_rng(seed)
    start = project_floor(rng.random(n_components), floor)
    trans = _project_rows(rng.random((n_components, n_components)), floor)
    emit = _project_rows(rng.random((n_components, vocab_size)), floor)
    return start, trans, emit


def baum_welch(sequences, vocab_size, n_components, n_iter, tol, seed, floor=DEFAULT_FLOOR):
    """Run Baum-Welch from a seeded random start.

    Returns ``(startprob, transmat, emissionprob, history)`` where
    ``history[t]`` is the total training log-likelihood of the parameters
    in force at iteration ``t``; the last entry belongs to the returned
    parameters.
    """
    obs, offsets = pack_sequences(sequences)
    if vocab_size <= 0:
        raise ValueError("vocabulary size must be positive")
    if obs.min() < 0 or obs.max() >= vocab_size:
        raise ValueError("token outside 0..vocab_size-1")
    start, trans, emit = random_hmm(n_components, vocab_size, seed, floor)
    history = []
    converged = False
    for _ in range(n_iter):
        ll, s_acc, t_acc, e_acc = _forward_backward(start, trans, emit, obs, offsets, True)
        history.append(float(ll.sum()))
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            converged = True
            break
        start = project_floor(s_acc, floor)
        trans = _project_rows(t_acc, floor)
        emit = _project_rows(e_acc, floor)
    if not converged:
        ll, *_ = _forward_backward(start, trans, emit, obs, offsets, False)
        history.append(float(ll.sum()))
    return start, trans, emit, history


def train_hmm(V, params):
    """Train an HMM scorer on the sequence view of ``V``.

    ``params``: n_components, n_iter, tol, seed and optionally floor.
    """
    params = ParamSet(params)
    if V.sequences is None:
        raise ValueError("train_hmm needs a feature matrix with a sequence view")
    n_components = int(params["n_components"])
    n_iter = int(params["n_iter"])
    tol = float(params["tol"])
    floor = float(params.get("floor", DEFAULT_FLOOR))
    if n_components < 1 or n_iter < 1 or tol <= 0:
        raise ValueError("need n_components >= 1, n_iter >= 1, tol > 0")
    vocab_size = V.vocab_size if V.vocab_size is not None else V.m
    start, trans, emit, history = baum_welch(
        V.sequences, vocab_size, n_components, n_iter, tol, int(params["seed"]), floor
    )
    model = HmmModel(start, trans, emit, params)
    scores = model.loglik_many(V.sequences)
    model.training_meta = {
        "train_loglik": history[-1],
        "iters_run": len(history) - 1,
        "loglik_history": history,
        "score_mean": float(scores.mean()),
        "score_std": float(scores.std()),
    }
    return model
