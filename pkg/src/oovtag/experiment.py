"""Taggers for every method, OOV/WIV evaluation, and the synthetic comparison."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import (BaselineArtifacts, apply_baseline, baseline_positions, fit_linear_map, random_unk_vector,
                        train_recon_student, train_single_unk)
from .config import Config
from .corpus import Corpus, NgramVocab, is_oov
from .student import PredictionConfig, Student, predict_labels, train_student
from .teacher import Teacher, evaluate_tags, train_teacher
from . import gradcore as gc

log = logging.getLogger(__name__)

Tagger = Callable[[Sequence[str]], list]


def teacher_tagger(teacher: Teacher) -> Tagger:
    def tag(tokens):
        with gc.no_grad():
            return [teacher.labels[j] for j in teacher.predict(tokens)]
    return tag


def student_tagger(teacher: Teacher, student: Student, pcfg: PredictionConfig) -> Tagger:
    return lambda tokens: predict_labels(tokens, teacher, student, pcfg)[0]


def baseline_tagger(kind: str, art: BaselineArtifacts, pcfg: PredictionConfig) -> Tagger:
    return lambda tokens: apply_baseline(kind, tokens, baseline_positions(kind, tokens, art, pcfg), art)


def evaluate(corpus: Corpus, tagger: Tagger, train_freq: dict, threshold: int, task: str) -> dict:
    """Overall, OOV-subset and WIV-subset metric of ``tagger`` on ``corpus``.

    A token is OOV when its training frequency is below ``threshold``; an
    entity is OOV when any of its tokens is.  Empty subsets report None.
    """
    preds = [tagger(s.tokens) for s in corpus.sentences]
    masks = [np.array([is_oov(train_freq.get(w, 0), threshold) for w in s.tokens], dtype=bool)
             for s in corpus.sentences]
    out = {"task": task, "metric": "f1" if task == "ner" else "accuracy",
           "n_sentences": len(corpus), "n_oov_tokens": int(sum(m.sum() for m in masks))}
    out["all"] = evaluate_tags(corpus, lambda i: preds[i], task)
    out["oov"] = evaluate_tags(corpus, lambda i: preds[i], task, mask_of=lambda i: masks[i])
    out["wiv"] = evaluate_tags(corpus, lambda i: preds[i], task, mask_of=lambda i: ~masks[i])
    return out


# ---------------------------------------------------------------- synthetic comparison


@dataclass
class Comparison:
    seed: int
    oov_accuracy: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)


def compare_on_synthetic(data, cfg: Config, methods: Sequence[str] = ("random_unk", "student", "recon_student"),
                         ) -> Comparison:
    """Train the shared teacher, then each requested OOV method; report test-OOV accuracy.

    ``data`` is a SyntheticData (or anything with train/dev/test corpora).
    Dev sentences drive early stopping for both teacher and students.
    """
    result = Comparison(cfg.seed)
    t0 = time.perf_counter()
    teacher = train_teacher(data.train, data.dev, cfg)
    result.seconds["teacher_training"] = time.perf_counter() - t0
    freq = teacher.vocab.freq
    pcfg = PredictionConfig.from_config(cfg)
    test = data.test.relabel(teacher.labels)
    for method in methods:
        t0 = time.perf_counter()
        if method == "teacher":
            tagger = teacher_tagger(teacher)
        elif method == "student_k0":
            # untrained student at K=0: OOV word parts are zero, char parts kept
            untrained = Student.create(cfg, NgramVocab.build(data.train, cfg.k_ngram), cfg.embed_dim,
                                       np.random.default_rng(cfg.seed))
            tagger = student_tagger(teacher, untrained, PredictionConfig(0, cfg.oov_threshold, cfg.replace_mode))
        elif method == "student":
            tagger = student_tagger(teacher, train_student(teacher, data.train, data.dev, cfg), pcfg)
        elif method == "recon_student":
            art = BaselineArtifacts(teacher=teacher, recon_student=train_recon_student(teacher, data.train,
                                                                                       data.dev, cfg),
                                    threshold=cfg.oov_threshold, K=cfg.K_iter)
            tagger = baseline_tagger(method, art, pcfg)
        elif method == "random_unk":
            art = BaselineArtifacts(teacher=teacher, random_vector=random_unk_vector(cfg.seed, cfg.word_dim))
            tagger = baseline_tagger(method, art, pcfg)
        elif method == "single_unk":
            art = BaselineArtifacts(single_unk_teacher=train_single_unk(data.train, data.dev, cfg))
            tagger = baseline_tagger(method, art, pcfg)
        elif method in ("meanpool", "linear_map"):
            art = BaselineArtifacts(teacher=teacher, threshold=cfg.oov_threshold)
            if method == "linear_map":
                art.linear_map = fit_linear_map(data.train, teacher, cfg, epochs=min(cfg.max_epochs, 10))
            tagger = baseline_tagger(method, art, pcfg)
        else:
            raise ValueError(f"unknown method {method!r}")
        result.oov_accuracy[method] = evaluate(test, tagger, freq, cfg.oov_threshold, cfg.task)["oov"]
        result.seconds[method] = time.perf_counter() - t0
        log.info("seed %d %s test-OOV %.4f (%.1fs)", cfg.seed, method, result.oov_accuracy[method],
                 result.seconds[method])
    return result

