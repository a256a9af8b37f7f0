"""Comparison methods that share the teacher tagger.

random_unk     teacher trained on all words; unseen words get one fixed random vector
single_unk     teacher trained with words of frequency < 5 collapsed into a trained UNK row
meanpool       OOV vector = mean word embedding of the WIV words in the same sentence
linear_map     meanpool followed by a learned linear map fitted by reconstruction
recon_student  the gated surface+context student trained to reconstruct e_w(w)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gradcore as gc
from .archive import ArchiveError, ModelArchive, load_model, save_model
from .config import Config
from .corpus import Corpus, NgramVocab, Sentence, Vocabulary, build_vocab, is_oov
from .gradcore import Parameter, Tensor
from .student import PredictionConfig, Student, _checked_step, fit_student
from .teacher import Teacher, train_teacher

KINDS = ("random_unk", "single_unk", "meanpool", "linear_map", "recon_student")
TEACHER_MIN_FREQ = {"random_unk": 1, "single_unk": 5, "meanpool": 1, "linear_map": 1, "recon_student": 1}


class MissingArtifact(KeyError):
    pass


def random_unk_vector(seed: int, dim: int = 50) -> np.ndarray:
    """One draw from the word-embedding initialiser, reused for every unseen word."""
    return gc.uniform_embedding(np.random.default_rng(seed), 1, dim)[0]


def meanpool_context(tokens: Sequence[str], i: int, vocab: Vocabulary, E_w: np.ndarray,
                     threshold: int = 5) -> np.ndarray:
    """Mean E_w row of the within-vocabulary words of the sentence other than position i."""
    if not 0 <= i < len(tokens):
        raise IndexError(f"position {i} outside sentence of length {len(tokens)}")
    rows = [vocab.stoi[w] for j, w in enumerate(tokens)
            if j != i and w in vocab.stoi and not is_oov(vocab.frequency(w), threshold)]
    if not rows:
        return np.zeros(E_w.shape[1])
    return E_w[rows].mean(axis=0)


@dataclass
class LinearMap:
    A: np.ndarray

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.A @ v


def reconstruction_pairs(train: Corpus, teacher: Teacher, threshold: int) -> tuple[np.ndarray, np.ndarray]:
    """(pooled context, target embedding) for every frequent-word occurrence in ``train``."""
    E_w = teacher.params["emb.word"].data
    xs, ys = [], []
    for s in train.sentences:
        for i, w in enumerate(s.tokens):
            if w in teacher.vocab.stoi and not is_oov(teacher.vocab.frequency(w), threshold):
                xs.append(meanpool_context(s.tokens, i, teacher.vocab, E_w, threshold))
                ys.append(E_w[teacher.vocab.stoi[w]])
    d = E_w.shape[1]
    return np.array(xs).reshape(-1, d), np.array(ys).reshape(-1, d)


def linear_map_loss(A: np.ndarray, X: np.ndarray, Y: np.ndarray) -> float:
    """Mean squared Euclidean reconstruction error of rows ``Y ≈ X A^T``."""
    R = X @ A.T - Y
    return float((R * R).sum(axis=1).mean())


def fit_linear_map_pairs(X: np.ndarray, Y: np.ndarray, epochs: int, lr: float = 1e-3, batch_size: int = 16,
                         seed: int = 0, A0: np.ndarray | None = None, curve: list | None = None) -> LinearMap:
    d = X.shape[1]
    A = Parameter("linear_map.A", np.eye(d) if A0 is None else A0)
    opt = gc.Adam([A], lr=lr)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            # rows: x A^T; written as x @ A^T through a transposed view of the parameter
            At = gc.make_op(A.data.T, (A,), lambda g: (g.T,))
            resid = gc.sub(gc.matmul(Tensor(X[idx]), At), Tensor(Y[idx]))
            loss = gc.scale(gc.sum_all(gc.mul(resid, resid)), 1.0 / len(idx))
            _checked_step(loss, opt)
        if curve is not None:
            curve.append(linear_map_loss(A.data, X, Y))
    return LinearMap(A.data.copy())


def fit_linear_map(train: Corpus, teacher: Teacher, cfg: Config, epochs: int | None = None,
                   curve: list | None = None) -> LinearMap:
    """Fit A so that A·meanpool(context) reconstructs e_w for frequent training words."""
    X, Y = reconstruction_pairs(train, teacher, cfg.oov_threshold)
    if X.shape[0] == 0:
        return LinearMap(np.eye(cfg.word_dim))
    return fit_linear_map_pairs(X, Y, epochs or cfg.max_epochs, cfg.lr, cfg.batch_size, cfg.seed, curve=curve)


def make_recon_step(teacher: Teacher, student: Student, cfg: Config):
    E_w = teacher.params["emb.word"]
    vocab = teacher.vocab

    def step(sent: Sentence, cache, opt, rng) -> float:
        tokens = sent.tokens
        keep = [i for i, w in enumerate(tokens)
                if w in vocab.stoi and not is_oov(vocab.frequency(w), cfg.oov_threshold)]
        if not keep:
            return 0.0
        base = cache(tokens)
        m = len(tokens)
        opt.zero_grad()
        ctx = student.context_all(gc.reshape(base, (1, m, base.shape[1])))[0][np.array(keep)]
        v, _ = student.gate(student.surface_batch([tokens[i] for i in keep]), ctx)
        target = Tensor(E_w.data[[vocab.stoi[tokens[i]] for i in keep]])
        diff = gc.sub(v, target)
        return _checked_step(gc.sum_all(gc.mul(diff, diff)), opt)

    return step


def train_recon_student(teacher: Teacher, train: Corpus, dev: Corpus | None, cfg: Config | None = None,
                        curve: list | None = None) -> Student:
    """Same architecture as the task student, trained on squared-Euclidean reconstruction."""
    cfg = cfg or teacher.cfg
    rng = np.random.default_rng(cfg.seed)
    student = Student.create(cfg, NgramVocab.build(train, cfg.k_ngram), teacher.cfg.embed_dim, rng)
    return fit_student(teacher, student, train, dev, cfg, make_recon_step(teacher, student, cfg), curve)


def train_single_unk(train: Corpus, dev: Corpus | None, cfg: Config, curve: list | None = None) -> Teacher:
    vocab = build_vocab(train, TEACHER_MIN_FREQ["single_unk"])
    return train_teacher(train, dev, cfg.replace(vocab_min_freq=TEACHER_MIN_FREQ["single_unk"]),
                         vocab=vocab, curve=curve)


# ---------------------------------------------------------------- application


@dataclass
class BaselineArtifacts:
    teacher: Teacher | None = None
    random_vector: np.ndarray | None = None
    single_unk_teacher: Teacher | None = None
    linear_map: LinearMap | None = None
    recon_student: Student | None = None
    threshold: int = 5
    K: int = 2
    extra: dict = field(default_factory=dict)


def _need(value, what: str, kind: str):
    if value is None:
        raise MissingArtifact(f"baseline {kind!r} requires artifact {what!r}")
    return value


def baseline_word_vectors(kind: str, tokens: Sequence[str], positions: Sequence[int],
                          art: BaselineArtifacts) -> tuple[Teacher, np.ndarray]:
    """The teacher a kind decodes with, and the word-part vectors it substitutes [k, d]."""
    if kind not in KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}")
    pos = list(positions)
    if kind == "single_unk":
        t = _need(art.single_unk_teacher, "single_unk_teacher", kind)
        row = t.params["emb.word"].data[t.vocab.unk_id]
        return t, np.tile(row, (len(pos), 1))
    t = _need(art.teacher, "teacher", kind)
    d = t.cfg.word_dim
    if kind == "random_unk":
        vec = _need(art.random_vector, "random_vector", kind)
        return t, np.tile(vec, (len(pos), 1))
    E_w = t.params["emb.word"].data
    if kind in ("meanpool", "linear_map"):
        pooled = np.array([meanpool_context(tokens, i, t.vocab, E_w, art.threshold) for i in pos]).reshape(-1, d)
        if kind == "linear_map":
            A = _need(art.linear_map, "linear_map", kind).A
            pooled = pooled @ A.T
        return t, pooled
    student = _need(art.recon_student, "recon_student", kind)
    with gc.no_grad():
        v, _ = student.predict_vectors(t.embed_words(tokens), tokens, pos, art.K)
    return t, v.data


def apply_baseline(kind: str, tokens: Sequence[str], positions: Sequence[int], art: BaselineArtifacts) -> list[str]:
    """Decode ``tokens`` with the kind's OOV vectors substituted at ``positions``."""
    teacher, vectors = baseline_word_vectors(kind, tokens, positions, art)
    d = teacher.cfg.word_dim
    with gc.no_grad():
        seq = teacher.embed_words(tokens).data.copy()
    if len(positions):
        seq[list(positions), :d] = vectors
    return [teacher.labels[j] for j in teacher.decode_embeddings(seq)]


def baseline_positions(kind: str, tokens: Sequence[str], art: BaselineArtifacts,
                       pcfg: PredictionConfig) -> list[int]:
    """Which positions a kind substitutes at test time."""
    if kind == "random_unk":
        freq = _need(art.teacher, "teacher", kind).vocab.freq
        return [i for i, w in enumerate(tokens) if freq.get(w, 0) == 0]
    teacher = art.single_unk_teacher if kind == "single_unk" else art.teacher
    freq = _need(teacher, "teacher", kind).vocab.freq
    if pcfg.replace_mode == "unseen-only" and kind != "single_unk":
        return [i for i, w in enumerate(tokens) if freq.get(w, 0) == 0]
    return [i for i, w in enumerate(tokens) if is_oov(freq.get(w, 0), pcfg.oov_threshold)]


# ---------------------------------------------------------------- archives


def save_baseline(path, kind: str, art: BaselineArtifacts, cfg: Config, metrics: dict | None = None) -> None:
    save_model(path, baseline_archive(kind, art, cfg, metrics))


def baseline_archive(kind: str, art: BaselineArtifacts, cfg: Config, metrics: dict | None = None) -> ModelArchive:
    meta = {"kind": kind, "config": cfg.to_dict(), "metrics": metrics or {}}
    if kind == "random_unk":
        return ModelArchive(kind, {"random_unk.vector": _need(art.random_vector, "random_vector", kind)},
                            {**meta, "seed": art.extra.get("seed", cfg.seed)})
    if kind == "single_unk":
        arch = _need(art.single_unk_teacher, "single_unk_teacher", kind).to_archive(metrics, component=kind)
        arch.meta["kind"] = kind
        return arch
    if kind == "meanpool":
        return ModelArchive(kind, {}, {**meta, "threshold": art.threshold})
    if kind == "linear_map":
        return ModelArchive(kind, {"linear_map.A": _need(art.linear_map, "linear_map", kind).A},
                            {**meta, "threshold": art.threshold})
    if kind == "recon_student":
        arch = _need(art.recon_student, "recon_student", kind).to_archive(metrics, component=kind)
        arch.meta["kind"] = kind
        return arch
    raise ValueError(f"unknown baseline kind {kind!r}")


def load_baseline(path, teacher: Teacher | None = None) -> tuple[str, BaselineArtifacts]:
    """Read a baseline archive; kinds other than single_unk need the shared ``teacher``."""
    arch = load_model(path)
    kind = arch.component
    if kind not in KINDS:
        raise ArchiveError(f"archive component {kind!r} is not a baseline kind")
    cfg_threshold = arch.meta.get("config", {}).get("oov_threshold", 5)
    art = BaselineArtifacts(teacher=teacher, threshold=arch.meta.get("threshold", cfg_threshold),
                            K=arch.meta.get("config", {}).get("K_iter", 2))
    if kind == "random_unk":
        art.random_vector = arch.require("random_unk.vector")
        art.extra["seed"] = arch.meta.get("seed")
    elif kind == "single_unk":
        art.single_unk_teacher = Teacher.from_archive(arch)
    elif kind == "linear_map":
        art.linear_map = LinearMap(arch.require("linear_map.A"))
    elif kind == "recon_student":
        art.recon_student = Student.from_archive(arch)
    return kind, art
