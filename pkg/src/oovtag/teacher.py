"""The supervised tagger: word + char-CNN embeddings, sequence encoder, CRF."""

from __future__ import annotations

import json
import logging
import math
from typing import Callable, Sequence

import numpy as np

from . import crf
from . import gradcore as gc
from .archive import ArchiveError, ModelArchive, load_model, save_model
from .config import Config, coerce
from .corpus import CharVocab, Corpus, Vocabulary, build_vocab, partition_oov
from .evalkit import entity_f1, extract_entities
from .gradcore import Parameter, Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def bilstm(x: Tensor, mask: np.ndarray, fw: tuple[Parameter, Parameter], bw: tuple[Parameter, Parameter],
           hidden: int) -> Tensor:
    """Run a masked bidirectional LSTM over x [B, T, D] -> [B, T, 2*hidden].

    Padded steps carry the state through unchanged, so the backward direction
    of a short sentence starts at its own last token.
    """
    B, T, _ = x.shape
    full = bool(mask.all())
    outs = []
    for weights, steps in ((fw, range(T)), (bw, range(T - 1, -1, -1))):
        h = c = Tensor(np.zeros((B, hidden)))
        states = [None] * T
        for t in steps:
            hn, cn = gc.lstm_cell(x[:, t], h, c, *weights)
            if full:
                h, c = hn, cn
            else:
                h, c = gc.where_rows(mask[:, t], hn, h), gc.where_rows(mask[:, t], cn, c)
            states[t] = h
        outs.append(gc.stack(states, axis=1))
    return gc.concat(outs, axis=-1)


class Teacher:
    """Tagger with parameters θ_T.  Construct with :meth:`create` or :meth:`load`."""

    component = "teacher"

    def __init__(self, cfg: Config, vocab: Vocabulary, chars: CharVocab, labels: Sequence[str],
                 params: dict[str, Parameter]):
        self.cfg = cfg
        self.vocab = vocab
        self.chars = chars
        self.labels = list(labels)
        self.params = params
        self.crf = crf.CrfParams(
            len(self.labels), self.hidden_dim, params["crf.W"], params["crf.b"],
            params.get("crf.trans"), mode=cfg.crf_potentials)

    # ------------------------------------------------------------ construction

    @property
    def hidden_dim(self) -> int:
        return 2 * self.cfg.lstm_hidden if self.cfg.encoder == "bilstm" else self.cfg.cnn_channels

    @classmethod
    def create(cls, cfg: Config, vocab: Vocabulary, chars: CharVocab, labels: Sequence[str],
               rng: np.random.Generator) -> "Teacher":
        p: dict[str, np.ndarray] = {}
        p["emb.word"] = gc.uniform_embedding(rng, len(vocab), cfg.word_dim)
        p["emb.char"] = gc.uniform_embedding(rng, len(chars), cfg.char_dim)
        for w in cfg.char_widths:
            p[f"charcnn.w{w}.W"] = gc.glorot(rng, (w, cfg.char_dim, cfg.char_filters),
                                             w * cfg.char_dim, cfg.char_filters)
            p[f"charcnn.w{w}.b"] = np.zeros(cfg.char_filters)
        d_in = cfg.embed_dim
        if cfg.encoder == "bilstm":
            for direction in ("fw", "bw"):
                W, b = gc.lstm_init(rng, d_in, cfg.lstm_hidden)
                p[f"enc.{direction}.W"], p[f"enc.{direction}.b"] = W, b
            hidden = 2 * cfg.lstm_hidden
        else:
            n_in = d_in
            for layer in range(3):
                p[f"enc.conv{layer}.W"] = gc.glorot(rng, (3, n_in, cfg.cnn_channels), 3 * n_in, cfg.cnn_channels)
                p[f"enc.conv{layer}.b"] = np.zeros(cfg.cnn_channels)
                n_in = cfg.cnn_channels
            hidden = cfg.cnn_channels
        head = crf.CrfParams.init(rng, len(labels), hidden, cfg.crf_potentials)
        for par in head.parameters():
            p[par.name] = par.data
        return cls(cfg, vocab, chars, labels, {k: Parameter(k, v) for k, v in p.items()})

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.trainable = flag

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k].data = v.copy()

    # ------------------------------------------------------------ forward

    def char_cnn_batch(self, words: Sequence[str]) -> Tensor:
        """Character CNN vectors e_c(w) for a list of words -> [n, filters * widths]."""
        cfg = self.cfg
        width = max(cfg.char_widths)
        encoded = [self.chars.encode(w) for w in words]
        lengths = np.array([max(len(e), width) for e in encoded])
        P = int(lengths.max())
        ids = np.full((len(words), P), self.chars.pad_id, dtype=np.int64)
        for i, e in enumerate(encoded):
            ids[i, :len(e)] = e
        x = gc.embedding(self.params["emb.char"], ids)
        pooled = []
        for w in cfg.char_widths:
            conv = gc.conv1d(x, self.params[f"charcnn.w{w}.W"], self.params[f"charcnn.w{w}.b"])
            valid = np.arange(P - w + 1)[None, :] <= (lengths - w)[:, None]
            pooled.append(gc.masked_max(conv, valid))
        return gc.concat(pooled, axis=-1)

    def char_cnn(self, word: str) -> np.ndarray:
        with gc.no_grad():
            return self.char_cnn_batch([word]).data[0]

    def embed_words(self, words: Sequence[str]) -> Tensor:
        """e(w) = [E_w[lookup(w)] ⊕ e_c(w)] for each word -> [n, embed_dim]."""
        ids = self.vocab.lookup_all(words)
        return gc.concat([gc.embedding(self.params["emb.word"], ids), self.char_cnn_batch(words)], axis=-1)

    def embed_word(self, word: str) -> np.ndarray:
        with gc.no_grad():
            return self.embed_words([word]).data[0]

    def encode(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Contextual states for embeddings x [B, T, D] -> [B, T, hidden]."""
        mask = np.ones(x.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if self.cfg.encoder == "bilstm":
            p = self.params
            return bilstm(x, mask, (p["enc.fw.W"], p["enc.fw.b"]), (p["enc.bw.W"], p["enc.bw.b"]),
                          self.cfg.lstm_hidden)
        keep = Tensor(mask[:, :, None].astype(float))
        h = x
        for layer in range(3):
            h = gc.mul(h, keep) if not mask.all() else h
            h = gc.conv1d(h, self.params[f"enc.conv{layer}.W"], self.params[f"enc.conv{layer}.b"], 1, 1)
            if layer < 2:
                h = gc.relu(h)
        return h

    def lattice(self, x: Tensor, mask=None) -> Tensor:
        return crf.potentials(self.encode(x, mask), self.crf)

    def loss_batch(self, x: Tensor, labels: np.ndarray, lengths: np.ndarray) -> Tensor:
        """Summed CRF NLL of a padded batch of embedded sentences x [B, T, D]."""
        mask = np.arange(x.shape[1])[None, :] < np.asarray(lengths)[:, None]
        return gc.sum_all(crf.nll_batch(self.lattice(x, mask), labels, lengths))

    def sentence_loss(self, embeds: Tensor, labels: Sequence[int]) -> Tensor:
        """CRF NLL of one sentence given its embedding matrix [m, D]."""
        m = embeds.shape[0]
        x = gc.reshape(embeds, (1, m, embeds.shape[1]))
        return gc.sum_all(crf.nll_batch(self.lattice(x), np.asarray([labels]), np.array([m])))

    def decode_embeddings(self, embeds) -> list[int]:
        with gc.no_grad():
            e = gc.as_tensor(embeds)
            lat = self.lattice(gc.reshape(e, (1,) + e.shape))
        return crf.viterbi(lat.data[0])

    def predict(self, tokens: Sequence[str]) -> list[int]:
        with gc.no_grad():
            return self.decode_embeddings(self.embed_words(tokens))

    def batch_embeddings(self, batch: Sequence[Sequence[str]]) -> tuple[Tensor, np.ndarray]:
        """Embed a batch of token lists into a right-padded [B, T, D] tensor."""
        words = sorted({w for toks in batch for w in toks})
        index = {w: i for i, w in enumerate(words)}
        table = self.embed_words(words)
        lengths = np.array([len(t) for t in batch])
        T = int(lengths.max())
        # padding rows point at an appended zero row
        pad_row = len(words)
        table = gc.concat([table, Tensor(np.zeros((1, table.shape[1])))], axis=0)
        ids = np.full((len(batch), T), pad_row, dtype=np.int64)
        for b, toks in enumerate(batch):
            ids[b, :len(toks)] = [index[w] for w in toks]
        return gc.embedding(table, ids), lengths

    # ------------------------------------------------------------ serialization

    def to_archive(self, metrics: dict | None = None, component: str | None = None) -> ModelArchive:
        meta = {
            "config": self.cfg.to_dict(),
            "vocab": self.vocab.to_json(),
            "chars": self.chars.to_json(),
            "labels": self.labels,
            "metrics": metrics or {},
        }
        return ModelArchive(component or self.component, {k: p.data for k, p in self.params.items()}, meta)

    @classmethod
    def from_archive(cls, arch: ModelArchive) -> "Teacher":
        meta = arch.meta
        try:
            cfg = coerce(meta["config"])
            vocab = Vocabulary.from_json(meta["vocab"])
            chars = CharVocab(meta["chars"])
            labels = meta["labels"]
        except KeyError as exc:
            raise ArchiveError(f"teacher archive trailer lacks {exc.args[0]!r}") from None
        template = cls.create(cfg, vocab, chars, labels, np.random.default_rng(0))
        params = {name: Parameter(name, arch.require(name)) for name in template.params}
        for name, p in params.items():
            if p.data.shape != template.params[name].data.shape:
                raise ArchiveError(f"tensor {name!r} has shape {p.data.shape}, "
                                   f"expected {template.params[name].data.shape}")
        return cls(cfg, vocab, chars, labels, params)

    def save(self, path, metrics: dict | None = None, component: str | None = None) -> None:
        save_model(path, self.to_archive(metrics, component))

    @classmethod
    def load(cls, path) -> "Teacher":
        return cls.from_archive(load_model(path))


# ---------------------------------------------------------------- training


def evaluate_tags(corpus: Corpus, predict: Callable[[int], list[str]], task: str,
                  mask_of: Callable[[int], np.ndarray] | None = None) -> float | None:
    """Token accuracy (pos) or entity F1 (ner) of ``predict`` over ``corpus``.

    With ``mask_of``, restrict to masked tokens / entities holding a masked token.
    Returns None when that subset is empty.
    """
    correct = total = seen = 0
    pred_ents, gold_ents = set(), set()
    pred_keep, gold_keep = {}, {}
    for i in range(len(corpus)):
        mask = None if mask_of is None else mask_of(i)
        if mask is not None and not mask.any():
            continue
        seen += 1
        pred, gold = predict(i), corpus.tags(i)
        if task == "ner":
            for e in extract_entities(pred, i):
                pred_ents.add(e)
                pred_keep[e] = mask is None or bool(mask[e.start:e.end].any())
            for e in extract_entities(gold, i):
                gold_ents.add(e)
                gold_keep[e] = mask is None or bool(mask[e.start:e.end].any())
        else:
            sel = np.ones(len(gold), dtype=bool) if mask is None else mask
            correct += sum(p == g for p, g, s in zip(pred, gold, sel) if s)
            total += int(sel.sum())
    if not seen:
        return None
    if task == "ner":
        return entity_f1(pred_ents, gold_ents, gold_keep, pred_keep).f1
    return correct / total if total else None


class EarlyStopping:
    """Patience counter over a dev metric.  Epochs without a metric never count."""

    def __init__(self, patience: int, snapshot: dict):
        self.patience = patience
        self.best = -math.inf
        self.best_snap = snapshot
        self.bad = 0
        self.improved_once = False

    def update(self, metric: float | None, snapshot: Callable[[], dict]) -> bool:
        """Record one epoch; True means stop."""
        if metric is None:
            return False
        if metric > self.best:
            self.best, self.best_snap, self.bad = metric, snapshot(), 0
            self.improved_once = True
        else:
            self.bad += 1
        return self.bad >= self.patience


def _mean_loss(teacher: Teacher, corpus: Corpus, batch_size: int) -> float:
    total = 0.0
    with gc.no_grad():
        for start in range(0, len(corpus), batch_size):
            sents = corpus.sentences[start:start + batch_size]
            x, lengths = teacher.batch_embeddings([s.tokens for s in sents])
            labels = _pad_labels(sents, x.shape[1])
            total += float(teacher.loss_batch(x, labels, lengths).data)
    return total / len(corpus)


def _pad_labels(sents, T: int) -> np.ndarray:
    out = np.zeros((len(sents), T), dtype=np.int64)
    for b, s in enumerate(sents):
        out[b, :len(s)] = s.labels
    return out


def train_teacher(train: Corpus, dev: Corpus | None, cfg: Config, vocab: Vocabulary | None = None,
                  curve: list | None = None, curve_path=None) -> Teacher:
    """Fit the tagger by minimising the mean per-sentence CRF NLL with Adam.

    Early-stops on the dev metric (token accuracy for pos, entity F1 for ner)
    and returns the best-dev parameters.  Without a dev corpus the final
    parameters are returned.
    """
    if len(train) == 0:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(cfg.seed)
    vocab = vocab or build_vocab(train, cfg.vocab_min_freq)
    teacher = Teacher.create(cfg, vocab, CharVocab.build(train), train.label_set, rng)
    dev = dev.relabel(teacher.labels) if dev is not None else None
    opt = gc.Adam(teacher.parameters(), lr=cfg.lr)
    records = curve if curve is not None else []

    def dev_metric() -> float:
        with gc.no_grad():
            preds = [teacher.predict(s.tokens) for s in dev.sentences]
        return evaluate_tags(dev, lambda i: [teacher.labels[j] for j in preds[i]], cfg.task)

    records.append({"epoch": 0, "train_loss": _mean_loss(teacher, train, cfg.batch_size),
                    "dev_metric": dev_metric() if dev is not None else None})
    stopper = EarlyStopping(cfg.patience, teacher.snapshot())
    stop = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            sents = [train.sentences[j] for j in order[start:start + cfg.batch_size]]
            opt.zero_grad()
            x, lengths = teacher.batch_embeddings([s.tokens for s in sents])
            loss = teacher.loss_batch(x, _pad_labels(sents, x.shape[1]), lengths)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"teacher loss became {value} at epoch {epoch}")
            gc.scale(loss, 1.0 / len(sents)).backward()
            opt.step()
            total += value
        rec = {"epoch": epoch, "train_loss": total / len(train), "dev_metric": None}
        if dev is not None:
            rec["dev_metric"] = dev_metric()
            stop = stopper.update(rec["dev_metric"], teacher.snapshot)
        records.append(rec)
        log.info("teacher epoch %d loss %.4f dev %s", epoch, rec["train_loss"], rec["dev_metric"])
        if curve_path is not None:
            with open(curve_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
        if stop:
            break
    if stopper.improved_once:
        teacher.restore(stopper.best_snap)
    return teacher


def oov_mask_fn(corpus: Corpus, vocab: Vocabulary, threshold: int):
    part = partition_oov(corpus, vocab.freq, threshold, task=None)
    return lambda i: part.token_masks[i]


def clone(teacher: Teacher) -> Teacher:
    return Teacher(teacher.cfg, teacher.vocab, teacher.chars, teacher.labels,
                   {k: Parameter(k, p.data, p.trainable) for k, p in teacher.params.items()})

