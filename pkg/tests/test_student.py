import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oovtag import gradcore as gc
from oovtag.archive import dumps
from oovtag.config import Config
from oovtag.corpus import NgramVocab
from oovtag.gradcore import Tensor
from oovtag.student import (FreezeViolation, PredictionConfig, Student, fit_student, make_task_step,
                            masked_each_loss, masked_set_loss, predict_oov, substitute_each, task_loss,
                            train_student)

from conftest import TINY, make_student, make_teacher

SENT = ["the", "dog", "sat", "home"]


@pytest.fixture
def pair(tiny_corpus, tiny_cfg):
    teacher = make_teacher(tiny_corpus, tiny_cfg, seed=2)
    return teacher, make_student(teacher, tiny_corpus)


@pytest.fixture(scope="module")
def gate_student():
    cfg = Config(**TINY)
    return Student.create(cfg, NgramVocab(["a"], 3), cfg.embed_dim, np.random.default_rng(5))


vec4 = st.lists(st.floats(-10, 10), min_size=4, max_size=4)


@settings(max_examples=60, deadline=None)
@given(vec4, vec4)
def test_gate_is_a_convex_combination(gate_student, vf, vc):
    vf, vc = np.array(vf), np.array(vc)
    with gc.no_grad():
        out, alpha = gate_student.gate(Tensor(vf[None]), Tensor(vc[None]))
    a = float(alpha.data[0, 0])
    assert 0.0 < a < 1.0
    lo, hi = np.minimum(vf, vc), np.maximum(vf, vc)
    tol = 1e-12 * (1 + np.abs(vf) + np.abs(vc))
    assert np.all(out.data[0] >= lo - tol) and np.all(out.data[0] <= hi + tol)
    np.testing.assert_allclose(out.data[0], a * vf + (1 - a) * vc, atol=1e-12)


def test_gate_extremes(gate_student):
    p = gate_student.params
    p["gate.b"].data[:] = 50.0
    v = np.arange(4.0)
    np.testing.assert_allclose(gate_student.gate_combine(v[None], np.zeros((1, 4)))[0], v, atol=1e-12)
    p["gate.b"].data[:] = -50.0
    np.testing.assert_allclose(gate_student.gate_combine(v[None], np.zeros((1, 4)))[0], 0.0, atol=1e-12)
    p["gate.b"].data[:] = 0.0


def test_surface_embedding_is_mean_of_known_grams(pair):
    _, student = pair
    ids = student.ngrams.ids("dog")
    expected = student.params["ngram.emb"].data[ids].mean(axis=0)
    np.testing.assert_allclose(student.surface_embed("dog"), expected, atol=1e-12)


def test_context_of_first_and_last_positions(pair):
    teacher, student = pair
    base = teacher.embed_words(SENT).data
    with gc.no_grad():
        ctx = student.context_all(Tensor(base[None])).data[0]
    # the first position's forward half and the last's backward half are empty
    changed = base.copy()
    changed[0] += 1.0
    with gc.no_grad():
        ctx2 = student.context_all(Tensor(changed[None])).data[0]
    np.testing.assert_array_equal(ctx[0], ctx2[0])
    assert not np.allclose(ctx[1], ctx2[1])


def test_context_embed_rejects_bad_position(pair):
    teacher, student = pair
    with pytest.raises(IndexError):
        student.context_embed(teacher.embed_words(SENT).data, 4)


@pytest.mark.parametrize("pos", [0, 2, 3])
def test_single_oov_prediction_is_invariant_in_K(pair, pos):
    teacher, student = pair
    outs = [predict_oov(SENT, [pos], teacher, student, PredictionConfig(K=k))[pos] for k in (1, 2, 3, 5)]
    for o in outs[1:]:
        assert o.tobytes() == outs[0].tobytes()


def test_K_zero_gives_zero_word_part(pair):
    teacher, student = pair
    out = predict_oov(SENT, [1, 2], teacher, student, PredictionConfig(K=0))
    for i, v in out.items():
        np.testing.assert_array_equal(v[:4], 0.0)
        np.testing.assert_array_equal(v[4:], teacher.char_cnn(SENT[i]))


def test_adjacent_oov_words_change_between_K1_and_K2(pair):
    teacher, student = pair
    one = predict_oov(SENT, [1, 2], teacher, student, PredictionConfig(K=1))
    two = predict_oov(SENT, [1, 2], teacher, student, PredictionConfig(K=2))
    assert np.linalg.norm(one[1] - two[1]) > 0 and np.linalg.norm(one[2] - two[2]) > 0


def test_prediction_keeps_char_part(pair):
    teacher, student = pair
    out = predict_oov(SENT, [3], teacher, student, PredictionConfig())
    np.testing.assert_array_equal(out[3][4:], teacher.embed_word("home")[4:])


def test_identity_substitution_is_bitwise_teacher_loss(pair, tiny_corpus):
    teacher, _ = pair
    for s in tiny_corpus.sentences:
        own = float(teacher.sentence_loss(teacher.embed_words(s.tokens), s.labels).data)
        for pos in ([0], list(range(len(s)))):
            true_rows = teacher.params["emb.word"].data[teacher.vocab.lookup_all([s.tokens[i] for i in pos])]
            sub = float(task_loss(teacher, s.tokens, s.labels, pos, true_rows).data)
            assert sub == own


def test_substitute_each_builds_variants():
    base = Tensor(np.arange(6.0).reshape(3, 2))
    rows = Tensor(-np.ones((3, 2)))
    out = substitute_each(base, rows).data
    for i in range(3):
        expected = base.data.copy()
        expected[i] = -1
        np.testing.assert_array_equal(out[i], expected)


def _frozen(teacher):
    teacher.set_trainable(False)
    return teacher


def test_student_gradients_through_frozen_teacher(pair, tiny_corpus):
    teacher, student = pair
    _frozen(teacher)
    s = tiny_corpus.sentences[1]
    base = teacher.embed_words(s.tokens)

    def loss():
        return gc.add(masked_each_loss(teacher, student, s.tokens, s.labels, base),
                      masked_set_loss(teacher, student, s.tokens, s.labels, base, [1, 2], 2))

    check = gc.check_gradients(loss, student.parameters(), h=1e-4)
    assert check.max_rel_error < 1e-4, check
    assert all(p.grad is None or not np.any(p.grad) for p in teacher.parameters())


def test_accumulated_loss_matches_per_position_average(pair, tiny_corpus):
    teacher, student = pair
    _frozen(teacher)
    s = tiny_corpus.sentences[1]
    base = teacher.embed_words(s.tokens)
    with gc.no_grad():
        acc = float(masked_each_loss(teacher, student, s.tokens, s.labels, base).data)
        each = [float(masked_set_loss(teacher, student, s.tokens, s.labels, base, [i], 1).data)
                for i in range(len(s))]
    assert acc == pytest.approx(np.mean(each), abs=1e-10)


@pytest.mark.parametrize("mode", ["accumulate", "per-position"])
def test_training_leaves_teacher_untouched(pair, tiny_corpus, mode):
    teacher, _ = pair
    before = dumps(teacher.to_archive())
    cfg = teacher.cfg.replace(max_epochs=2, student_update_mode=mode)
    curve = []
    student = train_student(teacher, tiny_corpus, tiny_corpus, cfg, curve=curve)
    assert dumps(teacher.to_archive()) == before
    assert all(p.trainable for p in teacher.parameters())
    assert len(curve) == 3
    assert isinstance(student, Student)


def test_gradient_into_teacher_is_a_freeze_violation(pair, tiny_corpus):
    teacher, student = pair
    inner = make_task_step(teacher, student, teacher.cfg)

    def leaky(sent, cache, opt, rng):
        teacher.params["crf.b"].trainable = True
        return inner(sent, cache, opt, rng)

    with pytest.raises(FreezeViolation, match="crf.b"):
        fit_student(teacher, student, tiny_corpus, None, teacher.cfg.replace(max_epochs=1), leaky)


def test_student_save_load_save(tmp_path, pair):
    _, student = pair
    student.save(tmp_path / "s.oovd")
    back = Student.load(tmp_path / "s.oovd")
    back.save(tmp_path / "s2.oovd")
    assert (tmp_path / "s.oovd").read_bytes() == (tmp_path / "s2.oovd").read_bytes()
    assert back.ngrams.itos == student.ngrams.itos
