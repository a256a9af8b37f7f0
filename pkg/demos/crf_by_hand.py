"""
A linear-chain CRF, checked by enumeration
==========================================

Build a random lattice, compute log Z with the forward recursion and
compare it with the brute-force sum over every label sequence.
"""

import itertools

import numpy as np

from oovtag import crf

rng = np.random.default_rng(7)
m, L = 4, 3
# scores[t, y_prev, y]; row L is the begin-of-sentence state
lattice = rng.normal(0, 2, size=(m, L + 1, L))

paths = list(itertools.product(range(L), repeat=m))
scores = np.array([crf.sequence_score(lattice, p) for p in paths])
brute = scores.max() + np.log(np.exp(scores - scores.max()).sum())

print("forward log Z  ", crf.log_partition(lattice))
print("brute-force    ", brute)

best = crf.viterbi(lattice)
print("viterbi path   ", best, "score", crf.sequence_score(lattice, best))
print("best by search ", list(paths[int(scores.argmax())]), "score", scores.max())

# per-position marginals sum to one over (y_prev, y)
marg = crf.marginals(lattice)
print("marginal mass per position", marg.sum(axis=(1, 2)).round(12))
