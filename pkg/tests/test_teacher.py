import numpy as np
import pytest

from oovtag import gradcore as gc
from oovtag.archive import dumps
from oovtag.config import Config
from oovtag.teacher import Teacher, _pad_labels, evaluate_tags, train_teacher

from conftest import TINY, make_teacher, toy_corpus


def _batch_loss(teacher, corpus):
    sents = corpus.sentences[:3]
    x, lengths = teacher.batch_embeddings([s.tokens for s in sents])
    return teacher.loss_batch(x, _pad_labels(sents, x.shape[1]), lengths)


@pytest.mark.parametrize("variant", [{}, {"encoder": "cnn3"}, {"crf_potentials": "split"}])
def test_teacher_gradients_match_finite_differences(tiny_corpus, variant):
    teacher = make_teacher(tiny_corpus, Config(**TINY, **variant), seed=3)
    if "crf.trans" in teacher.params:
        trans = teacher.params["crf.trans"]
        trans.data[:] = np.random.default_rng(0).normal(0, 0.5, trans.shape)
    check = gc.check_gradients(lambda: _batch_loss(teacher, tiny_corpus), teacher.parameters(), h=1e-4)
    assert check.max_rel_error < 1e-4, check


def test_batch_loss_is_sum_of_sentence_losses(tiny_corpus, tiny_cfg):
    teacher = make_teacher(tiny_corpus, tiny_cfg)
    batched = float(_batch_loss(teacher, tiny_corpus).data)
    singles = sum(float(teacher.sentence_loss(teacher.embed_words(s.tokens), s.labels).data)
                  for s in tiny_corpus.sentences[:3])
    assert batched == pytest.approx(singles, abs=1e-10)


def test_char_cnn_ignores_batch_companions(tiny_corpus, tiny_cfg):
    teacher = make_teacher(tiny_corpus, tiny_cfg)
    alone = teacher.char_cnn("ab")
    with gc.no_grad():
        mixed = teacher.char_cnn_batch(["ab", "catastrophe"]).data[0]
    np.testing.assert_allclose(alone, mixed, atol=1e-12)
    assert teacher.char_cnn("").shape == (tiny_cfg.char_out,)


def test_unknown_words_use_unk_row(tiny_corpus, tiny_cfg):
    teacher = make_teacher(tiny_corpus, tiny_cfg)
    e = teacher.embed_word("zebra")
    np.testing.assert_array_equal(e[:4], teacher.params["emb.word"].data[teacher.vocab.unk_id])


def test_decode_returns_one_label_per_token(tiny_corpus, tiny_cfg):
    teacher = make_teacher(tiny_corpus, tiny_cfg)
    for s in tiny_corpus.sentences:
        path = teacher.predict(s.tokens)
        assert len(path) == len(s) and all(0 <= y < len(teacher.labels) for y in path)


def test_overfit_toy_corpus():
    train = toy_corpus()
    cfg = Config(max_epochs=200, patience=200, seed=0)
    teacher = train_teacher(train, train, cfg)
    preds = [teacher.predict(s.tokens) for s in train.sentences]
    acc = evaluate_tags(train, lambda i: [teacher.labels[j] for j in preds[i]], "pos")
    assert acc >= 0.99


def test_training_is_deterministic(tiny_corpus, tiny_cfg):
    cfg = tiny_cfg.replace(max_epochs=3)
    a = train_teacher(tiny_corpus, tiny_corpus, cfg)
    b = train_teacher(tiny_corpus, tiny_corpus, cfg)
    assert dumps(a.to_archive()) == dumps(b.to_archive())


def test_training_curve_starts_with_untrained_loss(tiny_corpus, tiny_cfg):
    curve = []
    train_teacher(tiny_corpus, None, tiny_cfg.replace(max_epochs=5), curve=curve)
    assert [r["epoch"] for r in curve] == list(range(6))
    assert curve[-1]["train_loss"] < curve[0]["train_loss"]


def test_empty_training_corpus_rejected(tiny_corpus, tiny_cfg):
    from oovtag.corpus import Corpus

    with pytest.raises(ValueError):
        train_teacher(Corpus([], "train", []), None, tiny_cfg)


def test_save_load_save_is_byte_identical(tmp_path, tiny_corpus, tiny_cfg):
    teacher = make_teacher(tiny_corpus, tiny_cfg)
    teacher.save(tmp_path / "a.oovd")
    again = Teacher.load(tmp_path / "a.oovd")
    again.save(tmp_path / "b.oovd")
    assert (tmp_path / "a.oovd").read_bytes() == (tmp_path / "b.oovd").read_bytes()
    assert again.labels == teacher.labels and again.vocab.itos == teacher.vocab.itos
    s = tiny_corpus.sentences[0]
    assert again.predict(s.tokens) == Teacher.load(tmp_path / "b.oovd").predict(s.tokens)


def test_evaluate_tags_empty_subset_is_none(tiny_corpus):
    gold = lambda i: tiny_corpus.tags(i)
    assert evaluate_tags(tiny_corpus, gold, "pos") == 1.0
    none = lambda i: np.zeros(len(tiny_corpus.sentences[i]), dtype=bool)
    assert evaluate_tags(tiny_corpus, gold, "pos", mask_of=none) is None
