"""CoNLL corpora, token normalization, vocabularies and the OOV partition."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .archive import atomic_write_text
from .evalkit import entity_is_oov, extract_entities, iob1_to_iob2

PAD, UNK, NUM, URL = "<PAD>", "<UNK>", "<NUM>", "<URL>"
SPECIALS = (PAD, UNK, NUM, URL)
# n-gram boundary symbols; private-use code points never occur in real text
BOW, EOW = "\ue000", "\ue001"

_NUMBER = re.compile(r"^[\d.,\-]*\d[\d.,\-]*$")
_URL = re.compile(r"^(https?://|www\.)", re.IGNORECASE)


class CorpusError(ValueError):
    pass


def normalize_token(raw: str, lowercase: bool = False) -> str:
    if _NUMBER.match(raw):
        return NUM
    if _URL.match(raw):
        return URL
    return raw.lower() if lowercase else raw


@dataclass
class Sentence:
    tokens: list[str]
    labels: list[int]
    raw_tokens: list[str]

    def __post_init__(self):
        if not self.tokens or len(self.tokens) != len(self.labels):
            raise CorpusError("a sentence needs >= 1 token and one label per token")

    def __len__(self):
        return len(self.tokens)


@dataclass
class Corpus:
    sentences: list[Sentence]
    split: str = "train"
    label_set: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.sentences)

    def tags(self, i: int) -> list[str]:
        return [self.label_set[j] for j in self.sentences[i].labels]

    def tokens(self) -> Iterable[str]:
        for s in self.sentences:
            yield from s.tokens

    def relabel(self, label_set: Sequence[str]) -> "Corpus":
        """Re-index labels against ``label_set`` (unknown labels are appended)."""
        labels = list(label_set)
        index = {lab: i for i, lab in enumerate(labels)}
        sents = []
        for i, s in enumerate(self.sentences):
            ids = []
            for tag in self.tags(i):
                if tag not in index:
                    index[tag] = len(labels)
                    labels.append(tag)
                ids.append(index[tag])
            sents.append(Sentence(list(s.tokens), ids, list(s.raw_tokens)))
        return Corpus(sents, self.split, labels)


def parse_conll_lines(lines: Iterable[str], split: str = "train", label_set=None,
                      lowercase: bool = False, to_iob2: bool = False, with_tags: bool = True,
                      source: str = "<input>") -> Corpus:
    """Parse CoNLL columns: first column is the token, last is the tag."""
    labels = list(label_set or [])
    index = {lab: i for i, lab in enumerate(labels)}
    sentences: list[Sentence] = []
    raw: list[str] = []
    tags: list[str] = []

    def flush():
        if not raw:
            return
        seq = iob1_to_iob2(tags) if to_iob2 else list(tags)
        ids = []
        for tag in seq:
            if tag not in index:
                index[tag] = len(labels)
                labels.append(tag)
            ids.append(index[tag])
        sentences.append(Sentence([normalize_token(t, lowercase) for t in raw], ids, list(raw)))
        raw.clear()
        tags.clear()

    for lineno, line in enumerate(lines, start=1):
        cols = line.split()
        if not cols:
            flush()
            continue
        if cols[0] == "-DOCSTART-":
            continue
        if with_tags:
            if len(cols) < 2:
                raise CorpusError(f"{source}:{lineno}: expected token and tag columns, got {line.rstrip()!r}")
            tags.append(cols[-1])
        else:
            tags.append("O")
        raw.append(cols[0])
    flush()
    if not sentences:
        raise CorpusError(f"{source}: no-sentences")
    return Corpus(sentences, split, labels)


def read_conll(path, split: str = "train", label_set=None, lowercase: bool = False,
               to_iob2: bool = False, with_tags: bool = True, encoding: str = "utf-8") -> Corpus:
    with open(path, encoding=encoding) as fh:
        return parse_conll_lines(fh, split, label_set, lowercase, to_iob2, with_tags, source=str(path))


def format_conll(corpus: Corpus, raw: bool = True) -> str:
    blocks = []
    for i, s in enumerate(corpus.sentences):
        toks = s.raw_tokens if raw else s.tokens
        blocks.append("".join(f"{t}\t{tag}\n" for t, tag in zip(toks, corpus.tags(i))))
    return "\n".join(blocks)


def write_conll(corpus: Corpus, path, raw: bool = True) -> None:
    atomic_write_text(path, format_conll(corpus, raw))


# ---------------------------------------------------------------- vocabularies


class Vocabulary:
    """Word ids plus training frequencies.  Lookup never fails."""

    def __init__(self, words: Sequence[str], freq: dict[str, int]):
        self.itos = list(words)
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        self.freq = Counter(freq)

    pad_id, unk_id, num_id, url_id = 0, 1, 2, 3

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def lookup(self, word: str) -> int:
        return self.stoi.get(word, self.unk_id)

    def lookup_all(self, words: Iterable[str]) -> np.ndarray:
        return np.array([self.lookup(w) for w in words], dtype=np.int64)

    def frequency(self, word: str) -> int:
        return self.freq.get(word, 0)

    def to_json(self) -> dict:
        """``{word: [id, freq]}``; counted words left out of the vocabulary get id -1."""
        out = {w: [i, self.freq.get(w, 0)] for i, w in enumerate(self.itos)}
        for w in sorted(self.freq):
            if w not in out:
                out[w] = [-1, self.freq[w]]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Vocabulary":
        words = [w for w, v in sorted(data.items(), key=lambda kv: kv[1][0]) if v[0] >= 0]
        return cls(words, {w: v[1] for w, v in data.items() if v[1]})


def word_counts(corpus: Corpus) -> Counter:
    return Counter(corpus.tokens())


def build_vocab(train: Corpus, min_freq: int = 1) -> Vocabulary:
    if train.split != "train":
        raise CorpusError(f"vocabularies are built from the train split, got {train.split!r}")
    counts = word_counts(train)
    kept = sorted((w for w, c in counts.items() if c >= min_freq and w not in SPECIALS),
                  key=lambda w: (-counts[w], w))
    return Vocabulary(list(SPECIALS) + kept, dict(counts))


class CharVocab:
    pad_id, unk_id = 0, 1

    def __init__(self, chars: Sequence[str]):
        self.itos = ["<cpad>", "<cunk>"] + list(chars)
        self.stoi = {c: i for i, c in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def encode(self, word: str) -> list[int]:
        return [self.stoi.get(c, self.unk_id) for c in word]

    @classmethod
    def build(cls, train: Corpus) -> "CharVocab":
        return cls(sorted({c for w in train.tokens() for c in w}))

    def to_json(self) -> list[str]:
        return self.itos[2:]


def ngram_set(word: str, k: int = 3) -> list[str]:
    """All substrings of length 1..k of the boundary-padded word (a multiset)."""
    if not word:
        raise ValueError("ngram_set needs a non-empty word")
    if k < 1:
        raise ValueError("k must be >= 1")
    padded = [BOW, *word, EOW]
    return ["".join(padded[i:i + m]) for m in range(1, k + 1) for i in range(len(padded) - m + 1)]


class NgramVocab:
    def __init__(self, grams: Sequence[str], k: int):
        self.k = k
        self.itos = list(grams)
        self.stoi = {g: i for i, g in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def ids(self, word: str) -> np.ndarray:
        """Ids of the word's grams that are known (multiset preserved)."""
        return np.array([self.stoi[g] for g in ngram_set(word, self.k) if g in self.stoi], dtype=np.int64)

    @classmethod
    def build(cls, train: Corpus, k: int = 3) -> "NgramVocab":
        grams = sorted({g for w in set(train.tokens()) for g in ngram_set(w, k)})
        return cls(grams, k)

    def to_json(self) -> dict:
        return {"k": self.k, "grams": self.itos}

    @classmethod
    def from_json(cls, data: dict) -> "NgramVocab":
        return cls(data["grams"], data["k"])


# ---------------------------------------------------------------- OOV partition


@dataclass
class OOVPartition:
    threshold: int
    token_masks: list[np.ndarray]
    entity_masks: list[dict]  # per sentence: Entity -> is_oov (gold entities)
    n_tokens: int
    n_oov_tokens: int
    n_entities: int
    n_oov_entities: int

    @property
    def oov_rate(self) -> float:
        return self.n_oov_tokens / self.n_tokens if self.n_tokens else 0.0

    @property
    def wiv_rate(self) -> float:
        return (self.n_tokens - self.n_oov_tokens) / self.n_tokens if self.n_tokens else 0.0

    @property
    def entity_oov_rate(self) -> float:
        return self.n_oov_entities / self.n_entities if self.n_entities else 0.0

    def report(self, task: str = "pos") -> dict:
        """Table-1 style summary: #OOV and OOV rate (entities for NER, tokens otherwise)."""
        out = {
            "threshold": self.threshold,
            "tokens": {"total": self.n_tokens, "oov": self.n_oov_tokens, "oov_rate": self.oov_rate},
        }
        if self.n_entities:
            out["entities"] = {"total": self.n_entities, "oov": self.n_oov_entities,
                               "oov_rate": self.entity_oov_rate}
        key = "entities" if task == "ner" and self.n_entities else "tokens"
        out["num_oov"] = out[key]["oov"]
        out["oov_rate"] = out[key]["oov_rate"]
        return out


def is_oov(freq: int, threshold: int) -> bool:
    # frequency exactly == threshold counts as within-vocabulary
    return freq < threshold


def partition_oov(eval_corpus: Corpus, train_freq, threshold: int = 5, task: str | None = None) -> OOVPartition:
    """Split evaluation tokens (and gold BIO entities) into OOV and WIV."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    freq = train_freq.freq if isinstance(train_freq, Vocabulary) else train_freq
    bio = task == "ner" or (task is None and _looks_bio(eval_corpus.label_set))
    token_masks, entity_masks = [], []
    n_tok = n_oov = n_ent = n_oov_ent = 0
    for i, s in enumerate(eval_corpus.sentences):
        mask = np.array([is_oov(freq.get(t, 0), threshold) for t in s.tokens], dtype=bool)
        token_masks.append(mask)
        n_tok += mask.size
        n_oov += int(mask.sum())
        ents = {}
        if bio:
            for e in extract_entities(eval_corpus.tags(i), sentence=i):
                ents[e] = entity_is_oov(e, mask)
            n_ent += len(ents)
            n_oov_ent += sum(ents.values())
        entity_masks.append(ents)
    return OOVPartition(threshold, token_masks, entity_masks, n_tok, n_oov, n_ent, n_oov_ent)


def _looks_bio(labels: Sequence[str]) -> bool:
    return bool(labels) and all(l == "O" or l[:2] in ("B-", "I-") for l in labels)


def save_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=1) + "\n")
