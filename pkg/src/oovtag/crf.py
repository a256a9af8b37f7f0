"""Linear-chain CRF with label-pair-specific potentials.

A lattice holds log-potentials ``scores[t, prev, cur]`` for positions
``t = 0..m-1``.  The predecessor axis has ``L + 1`` entries; index ``L`` is
the BOS pseudo-label, which is only a legal predecessor at ``t = 0``.  There
is no end transition.

Potentials come from the encoder states ``h_t`` as
``scores[t, y', y] = W[y', y] . h_t + b[y', y]`` so that every label pair has
its own weight vector.  The more common emission-plus-transition split is
available as ``mode="split"``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .gradcore import Parameter, Tensor, logsumexp_values


@dataclass
class CrfParams:
    n_labels: int
    hidden: int
    W: Parameter  # pair: [L+1, L, H]; split: [L, H]
    b: Parameter  # pair: [L+1, L]; split: [L]
    trans: Parameter | None = None  # split only: [L+1, L]
    mode: str = "pair"

    @classmethod
    def init(cls, rng: np.random.Generator, n_labels: int, hidden: int, mode: str = "pair",
             prefix: str = "crf") -> "CrfParams":
        L, H = n_labels, hidden
        if mode == "pair":
            W = gc.glorot(rng, (L + 1, L, H), H, L)
            return cls(L, H, Parameter(f"{prefix}.W", W), Parameter(f"{prefix}.b", np.zeros((L + 1, L))))
        if mode == "split":
            W = gc.glorot(rng, (L, H), H, L)
            return cls(L, H, Parameter(f"{prefix}.W", W), Parameter(f"{prefix}.b", np.zeros(L)),
                       Parameter(f"{prefix}.trans", np.zeros((L + 1, L))), mode="split")
        raise ValueError(f"unknown CRF potential mode {mode!r}")

    def parameters(self) -> list[Parameter]:
        ps = [self.W, self.b]
        if self.trans is not None:
            ps.append(self.trans)
        return ps


def potentials(h: Tensor, params: CrfParams) -> Tensor:
    """Differentiable lattice from hidden states ``h`` [..., m, H] -> [..., m, L+1, L]."""
    L, H = params.n_labels, params.hidden
    if h.shape[-1] != H:
        raise ValueError(f"CRF expects hidden size {H}, got {h.shape[-1]}")
    if params.mode == "split":
        emit = gc.affine(h, _transpose(params.W), params.b)
        return gc.add(gc.reshape(emit, emit.shape[:-1] + (1, L)), params.trans)
    W2 = _transpose(gc.reshape(params.W, ((L + 1) * L, H)))
    flat = gc.affine(h, W2, gc.reshape(params.b, ((L + 1) * L,)))
    return gc.reshape(flat, h.shape[:-1] + (L + 1, L))


def _transpose(a: Tensor) -> Tensor:
    return gc.make_op(a.data.T, (a,), lambda g: (g.T,))


def log_potentials(H, params: CrfParams) -> np.ndarray:
    """Plain-array lattice ``[m, L+1, L]`` for hidden sequence ``H`` [m, Hdim]."""
    return potentials(gc.Tensor(H), params).data


# ---------------------------------------------------------------- inference


def _forward(scores: np.ndarray, lengths: np.ndarray):
    """Forward recursion over a batch.  Returns (alphas, log_z).

    ``alphas[t]`` is [B, L+1] and holds the log-mass of prefixes ending at
    position ``t - 1`` (``alphas[0]`` is the BOS start state).
    """
    B, T, _, L = scores.shape
    alpha = np.full((B, L + 1), -np.inf)
    alpha[:, L] = 0.0
    alphas = [alpha]
    pad = np.full((B, 1), -np.inf)
    for t in range(T):
        new = logsumexp_values(alpha[:, :, None] + scores[:, t], axis=1)
        new = np.concatenate([new, pad], axis=1)
        alpha = np.where((t < lengths)[:, None], new, alpha)
        alphas.append(alpha)
    log_z = logsumexp_values(alpha[:, :L], axis=1)
    return alphas, log_z


def _backward(scores: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    B, T, _, L = scores.shape
    beta = np.zeros((B, T, L))
    for t in range(T - 2, -1, -1):
        cand = logsumexp_values(scores[:, t + 1, :L, :] + beta[:, t + 1][:, None, :], axis=2)
        beta[:, t] = np.where((t + 1 < lengths)[:, None], cand, 0.0)
    return beta


def _gold_scores(scores: np.ndarray, labels: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    B, T, _, L = scores.shape
    prev = np.concatenate([np.full((B, 1), L), labels[:, :-1]], axis=1)
    picked = scores[np.arange(B)[:, None], np.arange(T)[None, :], prev, labels]
    mask = np.arange(T)[None, :] < lengths[:, None]
    return np.where(mask, picked, 0.0).sum(axis=1)


def _edge_marginals(scores, lengths, alphas, log_z) -> np.ndarray:
    B, T, _, L = scores.shape
    beta = _backward(scores, lengths)
    prev_alpha = np.stack(alphas[:T], axis=1)  # [B, T, L+1]
    logm = prev_alpha[:, :, :, None] + scores + beta[:, :, None, :] - log_z[:, None, None, None]
    marg = np.exp(logm)
    mask = (np.arange(T)[None, :] < lengths[:, None])[:, :, None, None]
    return np.where(mask, marg, 0.0)


def _check_lattice(lattice: np.ndarray) -> np.ndarray:
    s = np.asarray(lattice, dtype=gc.DTYPE)
    if s.ndim != 3 or s.shape[1] != s.shape[2] + 1:
        raise ValueError(f"lattice must have shape [m, L+1, L], got {s.shape}")
    if s.shape[0] < 1:
        raise ValueError("lattice must cover at least one position")
    return s


def log_partition(lattice) -> float:
    s = _check_lattice(lattice)
    _, log_z = _forward(s[None], np.array([s.shape[0]]))
    return float(log_z[0])


def sequence_score(lattice, labels) -> float:
    s = _check_lattice(lattice)
    y = np.asarray(labels, dtype=np.int64)
    m, _, L = s.shape
    if y.shape != (m,):
        raise ValueError(f"label sequence length {y.shape} does not match lattice length {m}")
    if np.any((y < 0) | (y >= L)):
        raise ValueError(f"label id out of range [0, {L})")
    return float(_gold_scores(s[None], y[None], np.array([m]))[0])


def nll(lattice, labels) -> float:
    """Negative log-likelihood of ``labels`` under the lattice."""
    return log_partition(lattice) - sequence_score(lattice, labels)


def marginals(lattice) -> np.ndarray:
    """Edge marginals p(y_{t-1}=y', y_t=y) with the same layout as the lattice."""
    s = _check_lattice(lattice)
    lengths = np.array([s.shape[0]])
    alphas, log_z = _forward(s[None], lengths)
    return _edge_marginals(s[None], lengths, alphas, log_z)[0]


def viterbi(lattice) -> list[int]:
    """Best label sequence; ties go to the smallest label id."""
    s = _check_lattice(lattice)
    m, _, L = s.shape
    delta = s[0, L].copy()
    back = np.zeros((m, L), dtype=np.int64)
    for t in range(1, m):
        cand = delta[:, None] + s[t, :L, :]
        back[t] = cand.argmax(axis=0)
        delta = cand.max(axis=0)
    path = [int(delta.argmax())]
    for t in range(m - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1]


# ---------------------------------------------------------------- training kernel


def nll_batch(scores: Tensor, labels: np.ndarray, lengths: np.ndarray) -> Tensor:
    """Per-sentence NLL [B] for a padded batch of lattices [B, T, L+1, L].

    Positions at or beyond a sentence's length contribute nothing, and their
    lattice entries receive zero gradient.
    """
    s = scores.data
    y = np.asarray(labels, dtype=np.int64)
    lens = np.asarray(lengths, dtype=np.int64)
    alphas, log_z = _forward(s, lens)
    out = log_z - _gold_scores(s, y, lens)

    def backward(g):
        B, T, _, L = s.shape
        grad = _edge_marginals(s, lens, alphas, log_z)
        prev = np.concatenate([np.full((B, 1), L), y[:, :-1]], axis=1)
        bi, ti = np.nonzero(np.arange(T)[None, :] < lens[:, None])
        grad[bi, ti, prev[bi, ti], y[bi, ti]] -= 1.0
        return (grad * g[:, None, None, None],)

    return gc.make_op(out, (scores,), backward)
