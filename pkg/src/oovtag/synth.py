"""Synthetic suffix-tagged corpora where every test word is unseen.

Words are a random stem plus one of R three-character suffixes, and the
suffix alone decides the tag.  Train, dev and test draw their words from
disjoint pools, so dev/test are 100% OOV and the surface form is the only
signal for them.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archive import atomic_write_text
from .corpus import Corpus, Sentence

DEFAULT_RULES = (("ion", "NOUN"), ("ive", "ADJ"), ("ate", "VERB"))


class RuleError(ValueError):
    pass


@dataclass
class SyntheticData:
    train: Corpus
    dev: Corpus
    test: Corpus
    rules: tuple
    pools: dict


def check_rules(rules) -> dict[str, str]:
    table: dict[str, str] = {}
    for suffix, tag in rules:
        if len(suffix) != 3:
            raise RuleError(f"suffix {suffix!r} must have exactly 3 characters")
        if suffix in table and table[suffix] != tag:
            raise RuleError(f"suffix {suffix!r} mapped to both {table[suffix]!r} and {tag!r}")
        table[suffix] = tag
    if not table:
        raise RuleError("at least one suffix rule is required")
    return table


def tag_of(word: str, rules) -> str:
    table = check_rules(rules)
    try:
        return table[word[-3:]]
    except KeyError:
        raise RuleError(f"no rule covers word {word!r}") from None


def _stem(rng: np.random.Generator, letters: str, lo: int, hi: int) -> str:
    n = int(rng.integers(lo, hi + 1))
    return "".join(letters[j] for j in rng.integers(0, len(letters), size=n))


def _pool(rng, size, suffixes, letters, taken: set) -> list[str]:
    words = []
    while len(words) < size:
        w = _stem(rng, letters, 3, 6) + suffixes[len(words) % len(suffixes)]
        if w not in taken:
            taken.add(w)
            words.append(w)
    rng.shuffle(words)
    return words


def _sentences(rng, pool, n, rules, label_set, min_len, max_len, split) -> Corpus:
    index = {t: i for i, t in enumerate(label_set)}
    sents = []
    for _ in range(n):
        m = int(rng.integers(min_len, max_len + 1))
        toks = [pool[j] for j in rng.integers(0, len(pool), size=m)]
        sents.append(Sentence(toks, [index[tag_of(w, rules)] for w in toks], list(toks)))
    return Corpus(sents, split, list(label_set))


def gen_synthetic(vocab_size: int = 500, n_test_words: int = 200, n_train: int = 2000, n_dev: int = 500,
                  n_test: int = 500, rules=DEFAULT_RULES, seed: int = 0, min_len: int = 4,
                  max_len: int = 10) -> SyntheticData:
    table = check_rules(rules)
    suffixes = list(table)
    rng = np.random.default_rng(seed)
    letters = string.ascii_lowercase
    taken: set[str] = set()
    pools = {
        "train": _pool(rng, vocab_size, suffixes, letters, taken),
        "dev": _pool(rng, n_test_words, suffixes, letters, taken),
        "test": _pool(rng, n_test_words, suffixes, letters, taken),
    }
    label_set = sorted(set(table.values()))
    rules = tuple(table.items())
    return SyntheticData(
        _sentences(rng, pools["train"], n_train, rules, label_set, min_len, max_len, "train"),
        _sentences(rng, pools["dev"], n_dev, rules, label_set, min_len, max_len, "dev"),
        _sentences(rng, pools["test"], n_test, rules, label_set, min_len, max_len, "test"),
        rules, pools)


def write_synthetic(data: SyntheticData, out_dir) -> dict[str, Path]:
    from .corpus import format_conll

    out = Path(out_dir)
    paths = {}
    for split in ("train", "dev", "test"):
        paths[split] = out / f"{split}.conll"
        atomic_write_text(paths[split], format_conll(getattr(data, split)))
    return paths
