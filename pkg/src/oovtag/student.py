"""Predicting task-specific word vectors for OOV words.

The student combines a surface-form vector (mean of character n-gram
embeddings) with a context vector (BiLSTM over the surrounding words,
projected to the word-embedding size) through a scalar sigmoid gate.  It is
trained by plugging its prediction into the frozen teacher and minimising
the teacher's own CRF loss.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import gradcore as gc
from .archive import ArchiveError, ModelArchive, load_model, save_model
from .config import Config, coerce
from .corpus import Corpus, NgramVocab, Sentence, is_oov
from .gradcore import Parameter, Tensor
from .teacher import EarlyStopping, Teacher, evaluate_tags

log = logging.getLogger(__name__)


class FreezeViolation(RuntimeError):
    pass


@dataclass
class PredictionConfig:
    K: int = 2
    oov_threshold: int = 5
    replace_mode: str = "all-below-threshold"

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")

    @classmethod
    def from_config(cls, cfg: Config) -> "PredictionConfig":
        return cls(cfg.K_iter, cfg.oov_threshold, cfg.replace_mode)


class Student:
    component = "student"

    def __init__(self, cfg: Config, ngrams: NgramVocab, params: dict[str, Parameter], input_dim: int):
        self.cfg = cfg
        self.ngrams = ngrams
        self.params = params
        self.input_dim = input_dim

    @classmethod
    def create(cls, cfg: Config, ngrams: NgramVocab, input_dim: int, rng: np.random.Generator) -> "Student":
        d, hid = cfg.word_dim, cfg.context_hidden
        p = {"ngram.emb": gc.uniform_embedding(rng, len(ngrams), d)}
        for direction in ("fw", "bw"):
            W, b = gc.lstm_init(rng, input_dim, hid)
            p[f"ctx.{direction}.W"], p[f"ctx.{direction}.b"] = W, b
        p["ctx.proj.W"] = gc.glorot(rng, (2 * hid, d), 2 * hid, d)
        p["ctx.proj.b"] = np.zeros(d)
        p["gate.w"] = gc.glorot(rng, (2 * d, 1), 2 * d, 1)
        p["gate.b"] = np.zeros(1)
        return cls(cfg, ngrams, {k: Parameter(k, v) for k, v in p.items()}, input_dim)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, snap) -> None:
        for k, v in snap.items():
            self.params[k].data = v.copy()

    # ------------------------------------------------------------ pieces

    def surface_batch(self, words: Sequence[str]) -> Tensor:
        """Mean n-gram embedding of each word; zero when no gram is known -> [n, d]."""
        ids = [self.ngrams.ids(w) for w in words]
        flat = np.concatenate(ids) if any(len(i) for i in ids) else np.zeros(0, dtype=np.int64)
        avg = np.zeros((len(words), flat.size))
        col = 0
        for r, i in enumerate(ids):
            if len(i):
                avg[r, col:col + len(i)] = 1.0 / len(i)
            col += len(i)
        if flat.size == 0:
            return Tensor(np.zeros((len(words), self.cfg.word_dim)))
        return gc.weighted_sum(gc.embedding(self.params["ngram.emb"], flat), avg)

    def surface_embed(self, word: str) -> np.ndarray:
        with gc.no_grad():
            return self.surface_batch([word]).data[0]

    def context_all(self, seq: Tensor) -> Tensor:
        """Context vectors for every position of each sequence.

        ``seq`` is [B, m, D].  Position i sees the forward state after
        positions < i and the backward state after positions > i; positions
        with an empty side get the zero initial state.  Returns [B, m, d].
        """
        B, m, _ = seq.shape
        hid = self.cfg.context_hidden
        p = self.params
        zero = Tensor(np.zeros((B, hid)))
        sides = []
        for direction, steps in (("fw", range(m)), ("bw", range(m - 1, -1, -1))):
            h = c = zero
            states = {}
            for t in steps:
                h, c = gc.lstm_cell(seq[:, t], h, c, p[f"ctx.{direction}.W"], p[f"ctx.{direction}.b"])
                states[t] = h
            if direction == "fw":
                ordered = [zero] + [states[t] for t in range(m - 1)]
            else:
                ordered = [states[t] for t in range(1, m)] + [zero]
            sides.append(gc.stack(ordered, axis=1))
        both = gc.concat(sides, axis=-1)
        return gc.affine(both, p["ctx.proj.W"], p["ctx.proj.b"])

    def context_embed(self, sent_vectors, i: int) -> np.ndarray:
        """Context vector of 0-based position ``i`` given the sentence's input vectors [m, D]."""
        x = np.asarray(sent_vectors, dtype=gc.DTYPE)
        if not 0 <= i < x.shape[0]:
            raise IndexError(f"position {i} outside sentence of length {x.shape[0]}")
        with gc.no_grad():
            return self.context_all(Tensor(x[None]))[0, i].data

    def gate(self, v_form: Tensor, v_context: Tensor) -> tuple[Tensor, Tensor]:
        """Return (combined vector, alpha) for row-aligned inputs [..., d]."""
        both = gc.concat([v_form, v_context], axis=-1)
        alpha = gc.sigmoid(gc.affine(both, self.params["gate.w"], self.params["gate.b"]))
        out = gc.add(v_context, gc.mul(alpha, gc.sub(v_form, v_context)))
        return out, alpha

    def gate_combine(self, v_form, v_context) -> np.ndarray:
        with gc.no_grad():
            return self.gate(gc.as_tensor(v_form), gc.as_tensor(v_context))[0].data

    # ------------------------------------------------------------ prediction

    def predict_vectors(self, base: Tensor, words: Sequence[str], positions: Sequence[int], K: int):
        """Jacobi-style iterative prediction of word parts at ``positions``.

        ``base`` is the teacher embedding matrix [m, D] of the sentence; its
        char part is kept for every substituted row.  Returns the predicted
        word parts [k, d] and the substituted matrix [m, D].
        """
        d = self.cfg.word_dim
        pos = np.asarray(sorted(positions), dtype=np.int64)
        if pos.size == 0:
            return Tensor(np.zeros((0, d))), base
        if pos.min() < 0 or pos.max() >= base.shape[0]:
            raise IndexError("OOV position outside the sentence")
        char_part = base[pos, d:]
        v = Tensor(np.zeros((pos.size, d)))
        if K > 0:
            v_form = self.surface_batch([words[i] for i in pos])
        for _ in range(K):
            seq = gc.scatter_rows(base, pos, gc.concat([v, char_part], axis=-1))
            ctx = self.context_all(gc.reshape(seq, (1,) + seq.shape))[0][pos]
            v, _ = self.gate(v_form, ctx)
        return v, gc.scatter_rows(base, pos, gc.concat([v, char_part], axis=-1))

    # ------------------------------------------------------------ serialization

    def to_archive(self, metrics=None, component: str | None = None) -> ModelArchive:
        meta = {"config": self.cfg.to_dict(), "ngrams": self.ngrams.to_json(),
                "input_dim": self.input_dim, "metrics": metrics or {}}
        return ModelArchive(component or self.component, {k: p.data for k, p in self.params.items()}, meta)

    @classmethod
    def from_archive(cls, arch: ModelArchive) -> "Student":
        try:
            cfg = coerce(arch.meta["config"])
            ngrams = NgramVocab.from_json(arch.meta["ngrams"])
            input_dim = int(arch.meta["input_dim"])
        except KeyError as exc:
            raise ArchiveError(f"student archive trailer lacks {exc.args[0]!r}") from None
        template = cls.create(cfg, ngrams, input_dim, np.random.default_rng(0))
        params = {}
        for name, ref in template.params.items():
            value = arch.require(name)
            if value.shape != ref.data.shape:
                raise ArchiveError(f"tensor {name!r} has shape {value.shape}, expected {ref.data.shape}")
            params[name] = Parameter(name, value)
        return cls(cfg, ngrams, params, input_dim)

    def save(self, path, metrics=None, component: str | None = None) -> None:
        save_model(path, self.to_archive(metrics, component))

    @classmethod
    def load(cls, path) -> "Student":
        return cls.from_archive(load_model(path))


# ---------------------------------------------------------------- inference API


def oov_positions(tokens: Sequence[str], teacher: Teacher, pcfg: PredictionConfig) -> list[int]:
    """Positions routed through the student under the configured replacement policy."""
    freq = teacher.vocab.freq
    if pcfg.replace_mode == "unseen-only":
        return [i for i, w in enumerate(tokens) if freq.get(w, 0) == 0]
    return [i for i, w in enumerate(tokens) if is_oov(freq.get(w, 0), pcfg.oov_threshold)]


def predict_oov(tokens: Sequence[str], positions, teacher: Teacher, student: Student,
                pcfg: PredictionConfig) -> dict[int, np.ndarray]:
    """Full replacement vectors [v_w ⊕ e_c(w)] for each OOV position."""
    with gc.no_grad():
        base = teacher.embed_words(tokens)
        _, seq = student.predict_vectors(base, tokens, positions, pcfg.K)
    return {int(i): seq.data[i].copy() for i in sorted(positions)}


def predict_labels(tokens: Sequence[str], teacher: Teacher, student: Student, pcfg: PredictionConfig,
                   positions=None) -> tuple[list[str], dict[int, np.ndarray]]:
    """Substitute student vectors at OOV positions and decode with the teacher."""
    positions = oov_positions(tokens, teacher, pcfg) if positions is None else positions
    with gc.no_grad():
        base = teacher.embed_words(tokens)
        _, seq = student.predict_vectors(base, tokens, positions, pcfg.K)
        path = teacher.decode_embeddings(seq)
    return [teacher.labels[j] for j in path], {int(i): seq.data[i].copy() for i in sorted(positions)}


# ---------------------------------------------------------------- training


def substitute_each(base: Tensor, rows: Tensor) -> Tensor:
    """Batch of m copies of ``base`` [m, D] where copy i has row i replaced by ``rows[i]``."""
    m = base.shape[0]
    data = np.broadcast_to(base.data, (m,) + base.shape).copy()
    diag = np.arange(m)
    data[diag, diag] = rows.data

    def backward(g):
        g_rows = g[diag, diag]
        g_base = g.sum(axis=0) - g_rows
        return g_base, g_rows

    return gc.make_op(data, (base, rows), backward)


def task_loss(teacher: Teacher, tokens: Sequence[str], labels: Sequence[int], positions,
              word_vectors: Tensor, base: Tensor | None = None) -> Tensor:
    """Teacher CRF NLL after replacing the word part at ``positions`` by ``word_vectors``."""
    d = teacher.cfg.word_dim
    base = teacher.embed_words(tokens) if base is None else base
    pos = np.asarray(sorted(positions), dtype=np.int64)
    seq = gc.scatter_rows(base, pos, gc.concat([gc.as_tensor(word_vectors), base[pos, d:]], axis=-1))
    return teacher.sentence_loss(seq, labels)


class _EmbeddingCache:
    """Frozen-teacher embeddings e(w), computed once per word type."""

    def __init__(self, teacher: Teacher, chunk: int = 256):
        self.teacher = teacher
        self.rows: dict[str, np.ndarray] = {}
        self.chunk = chunk

    def warm(self, words) -> None:
        todo = sorted(set(words) - self.rows.keys())
        with gc.no_grad():
            for start in range(0, len(todo), self.chunk):
                part = todo[start:start + self.chunk]
                data = self.teacher.embed_words(part).data
                self.rows.update(zip(part, data))

    def __call__(self, tokens: Sequence[str]) -> Tensor:
        self.warm(tokens)
        return Tensor(np.stack([self.rows[w] for w in tokens]))


def _check_frozen(teacher: Teacher) -> None:
    for p in teacher.parameters():
        if p.trainable:
            raise FreezeViolation(f"teacher parameter {p.name!r} is trainable during student training")
        if p.grad is not None and np.any(p.grad):
            raise FreezeViolation(f"gradient reached teacher parameter {p.name!r}")


def student_dev_metric(teacher: Teacher, student: Student, dev: Corpus, pcfg: PredictionConfig,
                       predict: Callable | None = None) -> float:
    """Metric on the dev OOV subset (accuracy for pos, entity F1 for ner)."""
    masks = [np.array([is_oov(teacher.vocab.freq.get(w, 0), pcfg.oov_threshold) for w in s.tokens])
             for s in dev.sentences]
    if predict is None:
        def predict(i):
            return predict_labels(dev.sentences[i].tokens, teacher, student, pcfg)[0]
    return evaluate_tags(dev, predict, teacher.cfg.task, mask_of=lambda i: masks[i])


def fit_student(teacher: Teacher, student: Student, train: Corpus, dev: Corpus | None, cfg: Config,
                sentence_step: Callable, curve: list | None = None, curve_path=None) -> Student:
    """Shared epoch loop: freeze the teacher, shuffle, step per sentence, early-stop on dev OOV."""
    rng = np.random.default_rng(cfg.seed + 1)
    flags = {p.name: p.trainable for p in teacher.parameters()}
    teacher.set_trainable(False)
    for p in teacher.parameters():
        p.grad = None
    pcfg = PredictionConfig.from_config(cfg)
    dev = dev.relabel(teacher.labels) if dev is not None else None
    train = train.relabel(teacher.labels)
    records = curve if curve is not None else []
    cache = _EmbeddingCache(teacher)
    cache.warm(train.tokens())
    opt = gc.Adam(student.parameters(), lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience, student.snapshot())
    stop = False
    try:
        if dev is not None:
            records.append({"epoch": 0, "train_loss": None,
                            "dev_metric": student_dev_metric(teacher, student, dev, pcfg)})
        for epoch in range(1, cfg.max_epochs + 1):
            total = 0.0
            for j in rng.permutation(len(train)):
                total += sentence_step(train.sentences[j], cache, opt, rng)
                _check_frozen(teacher)
            rec = {"epoch": epoch, "train_loss": total / len(train), "dev_metric": None}
            if dev is not None:
                rec["dev_metric"] = student_dev_metric(teacher, student, dev, pcfg)
                stop = stopper.update(rec["dev_metric"], student.snapshot)
            records.append(rec)
            log.info("student epoch %d loss %.4f dev %s", epoch, rec["train_loss"], rec["dev_metric"])
            if curve_path is not None:
                with open(curve_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec) + "\n")
            if stop:
                break
    finally:
        for p in teacher.parameters():
            p.trainable = flags[p.name]
    if stopper.improved_once:
        student.restore(stopper.best_snap)
    return student


def _checked_step(loss: Tensor, opt: gc.Adam) -> float:
    value = float(loss.data)
    if not math.isfinite(value):
        raise FloatingPointError(f"student loss became {value}")
    loss.backward()
    opt.step()
    return value


def masked_each_loss(teacher: Teacher, student: Student, tokens: Sequence[str], labels: Sequence[int],
                     base: Tensor) -> Tensor:
    """Mean teacher NLL over the m variants of the sentence with one position predicted each."""
    d = teacher.cfg.word_dim
    m = len(tokens)
    ctx = student.context_all(gc.reshape(base, (1, m, base.shape[1])))[0]
    v, _ = student.gate(student.surface_batch(tokens), ctx)
    x = substitute_each(base, gc.concat([v, base[:, d:]], axis=-1))
    loss = teacher.loss_batch(x, np.tile(np.asarray(labels), (m, 1)), np.full(m, m))
    return gc.scale(loss, 1.0 / m)


def masked_set_loss(teacher: Teacher, student: Student, tokens: Sequence[str], labels: Sequence[int],
                    base: Tensor, positions: Sequence[int], K: int) -> Tensor:
    """Teacher NLL with all of ``positions`` predicted jointly by K Jacobi iterations."""
    _, seq = student.predict_vectors(base, tokens, positions, K)
    return teacher.sentence_loss(seq, labels)


def make_task_step(teacher: Teacher, student: Student, cfg: Config) -> Callable:
    """One update per sentence on the teacher's CRF loss with simulated OOV positions."""

    def step(sent: Sentence, cache: _EmbeddingCache, opt: gc.Adam, rng: np.random.Generator) -> float:
        tokens, labels = sent.tokens, sent.labels
        m = len(tokens)
        base = cache(tokens)
        if m >= 2 and rng.random() < cfg.multi_oov_prob:
            pos = sorted(rng.choice(m, size=min(2, m), replace=False).tolist())
            opt.zero_grad()
            return _checked_step(masked_set_loss(teacher, student, tokens, labels, base, pos,
                                                 max(cfg.K_iter, 1)), opt)
        if cfg.student_update_mode == "per-position":
            total = 0.0
            for i in range(m):
                opt.zero_grad()
                total += _checked_step(masked_set_loss(teacher, student, tokens, labels, base, [i], 1), opt)
            return total / m
        opt.zero_grad()
        return _checked_step(masked_each_loss(teacher, student, tokens, labels, base), opt)

    return step


def train_student(teacher: Teacher, train: Corpus, dev: Corpus | None, cfg: Config | None = None,
                  curve: list | None = None, curve_path=None) -> Student:
    """Train the student against the frozen teacher's task loss."""
    cfg = cfg or teacher.cfg
    rng = np.random.default_rng(cfg.seed)
    student = Student.create(cfg, NgramVocab.build(train, cfg.k_ngram), teacher.cfg.embed_dim, rng)
    step = make_task_step(teacher, student, cfg)
    return fit_student(teacher, student, train, dev, cfg, step, curve, curve_path)
