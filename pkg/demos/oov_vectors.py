"""
Predicting vectors for unseen words
===================================

Train a small teacher and student on a toy suffix corpus, then look at
what the student does for a sentence with two adjacent unseen words:
the gate value for each, and how the second Jacobi iteration moves
the prediction once the neighbour has a vector of its own.
"""

import numpy as np

from oovtag.config import Config
from oovtag.student import PredictionConfig, predict_labels, predict_oov, train_student
from oovtag.synth import gen_synthetic
from oovtag.teacher import train_teacher
from oovtag import gradcore as gc

data = gen_synthetic(vocab_size=120, n_test_words=40, n_train=400, n_dev=80, n_test=80, seed=3)
cfg = Config(max_epochs=4, patience=2, seed=3)

teacher = train_teacher(data.train, data.dev, cfg)
student = train_student(teacher, data.train, data.dev, cfg)

sent = data.test.sentences[0].tokens
print("sentence:", " ".join(sent))
pos = [1, 2]

for K in (0, 1, 2, 3):
    out = predict_oov(sent, pos, teacher, student, PredictionConfig(K=K))
    print(f"K={K}", "  ".join(f"|v_{i}|={np.linalg.norm(out[i][:cfg.word_dim]):.4f}" for i in pos))

# the gate: how much of each vector comes from the word's spelling
with gc.no_grad():
    base = teacher.embed_words(sent)
    v_form = student.surface_batch([sent[i] for i in pos])
    ctx = student.context_all(gc.reshape(base, (1,) + base.shape))[0][np.array(pos)]
    _, alpha = student.gate(v_form, ctx)
print("alpha (spelling share):", alpha.data.ravel().round(3))

tags, _ = predict_labels(sent, teacher, student, PredictionConfig.from_config(cfg))
gold = data.test.tags(0)
for w, t, g in zip(sent, tags, gold):
    print(f"{w:14s} {t:5s} {'' if t == g else '(gold ' + g + ')'}")
