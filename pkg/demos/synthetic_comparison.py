"""
Every OOV method on the suffix-tag corpus
=========================================

Dev and test words never occur in training, so every test token is OOV.
One teacher is shared; each method decides what goes into the word-vector
slot of the unseen words.  Takes a few minutes on one core.

    python demos/synthetic_comparison.py [seed]
"""

import logging
import sys

from oovtag.config import Config
from oovtag.experiment import compare_on_synthetic
from oovtag.synth import gen_synthetic

logging.basicConfig(level=logging.INFO, format="%(message)s")
seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

methods = ("teacher", "student_k0", "random_unk", "single_unk", "meanpool", "linear_map",
           "recon_student", "student")
result = compare_on_synthetic(gen_synthetic(seed=seed), Config(seed=seed, max_epochs=10, patience=2), methods)

print(f"\ntest-OOV token accuracy, seed {seed}")
for name in methods:
    print(f"  {name:14s} {result.oov_accuracy[name]:.4f}   ({result.seconds[name]:.0f}s)")

# The teacher's character CNN sees the suffix of every unseen word, so
# even methods that put an uninformative vector in the word slot can get
# these right.  Compare the K=0 row (word slot left at zero) with the rest.
