import numpy as np
import pytest

from oovtag.config import Config
from oovtag.corpus import CharVocab, Corpus, NgramVocab, Sentence, build_vocab, parse_conll_lines
from oovtag.student import Student
from oovtag.teacher import Teacher

TINY = dict(word_dim=4, char_dim=3, char_filters=2, lstm_hidden=3, context_hidden=3, cnn_channels=3)

TINY_LINES = """\
the DET
cat NOUN
sat VERB

a DET
dog NOUN
ran VERB
home NOUN

the DET
dog NOUN

cats NOUN
sat VERB
"""


@pytest.fixture
def tiny_cfg():
    return Config(**TINY)


@pytest.fixture
def tiny_corpus():
    return parse_conll_lines(TINY_LINES.splitlines())


def make_teacher(corpus, cfg, seed=0):
    rng = np.random.default_rng(seed)
    return Teacher.create(cfg, build_vocab(corpus, cfg.vocab_min_freq), CharVocab.build(corpus), corpus.label_set, rng)


def make_student(teacher, corpus, seed=1):
    cfg = teacher.cfg
    return Student.create(cfg, NgramVocab.build(corpus, cfg.k_ngram), cfg.embed_dim, np.random.default_rng(seed))


def toy_corpus(n_sent=32, n_labels=5, n_words=40, seed=0) -> Corpus:
    """Words carry a preferred label; a fifth of tokens take the label of the previous word instead."""
    rng = np.random.default_rng(seed)
    words = [f"w{i:02d}" for i in range(n_words)]
    word_label = rng.integers(0, n_labels, size=n_words)
    labels = [f"L{j}" for j in range(n_labels)]
    sents = []
    for _ in range(n_sent):
        m = int(rng.integers(3, 9))
        ids = rng.integers(0, n_words, size=m)
        ys = [int(word_label[ids[0]])]
        for t in range(1, m):
            ys.append(ys[-1] if ids[t] % 5 == 0 else int(word_label[ids[t]]))
        toks = [words[i] for i in ids]
        sents.append(Sentence(toks, ys, list(toks)))
    return Corpus(sents, "train", labels)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def add(number: int, ok: bool | None, detail: str) -> None:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
