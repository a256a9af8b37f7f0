import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oovtag.baselines import (KINDS, BaselineArtifacts, LinearMap, MissingArtifact, apply_baseline,
                              baseline_archive, baseline_positions, baseline_word_vectors, fit_linear_map,
                              fit_linear_map_pairs, linear_map_loss, load_baseline, meanpool_context,
                              random_unk_vector, reconstruction_pairs, save_baseline, train_recon_student)
from oovtag.archive import dumps
from oovtag.config import Config
from oovtag.corpus import Sentence, is_oov
from oovtag.student import PredictionConfig

from conftest import TINY, make_student, make_teacher, toy_corpus


@pytest.fixture(scope="module")
def world():
    corpus = toy_corpus(n_sent=100, seed=4)
    corpus.sentences.append(Sentence(["hapax", "w01"], [0, 1], ["hapax", "w01"]))
    cfg = Config(**TINY)
    teacher = make_teacher(corpus, cfg, seed=1)
    art = BaselineArtifacts(teacher=teacher, random_vector=random_unk_vector(0, cfg.word_dim),
                            single_unk_teacher=make_teacher_with_vocab(corpus, cfg, 5),
                            linear_map=LinearMap(np.eye(cfg.word_dim)),
                            recon_student=make_student(teacher, corpus), threshold=5, K=2)
    return corpus, teacher, art


def make_teacher_with_vocab(corpus, cfg, min_freq):
    return make_teacher(corpus, cfg.replace(vocab_min_freq=min_freq), seed=2)


def test_random_unk_vector_is_seeded():
    a, b = random_unk_vector(3), random_unk_vector(3)
    assert a.shape == (50,) and a.tobytes() == b.tobytes()
    assert np.abs(a).max() <= 0.1
    assert not np.array_equal(a, random_unk_vector(4))


def test_meanpool_uses_only_frequent_context_words(world):
    corpus, teacher, _ = world
    E = teacher.params["emb.word"].data
    common = max(teacher.vocab.freq, key=teacher.vocab.freq.get)
    toks = ["unseen", common, "also-unseen"]
    np.testing.assert_allclose(meanpool_context(toks, 0, teacher.vocab, E), E[teacher.vocab.stoi[common]])
    np.testing.assert_array_equal(meanpool_context(["x", "y"], 0, teacher.vocab, E), 0.0)
    with pytest.raises(IndexError):
        meanpool_context(toks, 3, teacher.vocab, E)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_meanpool_is_permutation_invariant(world, data):
    _, teacher, _ = world
    E = teacher.params["emb.word"].data
    words = list(teacher.vocab.freq) + ["novel"]
    toks = data.draw(st.lists(st.sampled_from(words), min_size=2, max_size=8))
    i = data.draw(st.integers(0, len(toks) - 1))
    rest = toks[:i] + toks[i + 1:]
    perm = data.draw(st.permutations(rest))
    j = data.draw(st.integers(0, len(perm)))
    shuffled = list(perm[:j]) + [toks[i]] + list(perm[j:])
    np.testing.assert_allclose(meanpool_context(toks, i, teacher.vocab, E),
                               meanpool_context(shuffled, j, teacher.vocab, E), atol=1e-12)


def test_identity_linear_map_equals_meanpool(world):
    corpus, teacher, art = world
    pcfg = PredictionConfig()
    for s in corpus.sentences[:20]:
        toks = list(s.tokens)
        toks[len(toks) // 2] = "never-seen"
        pos = baseline_positions("meanpool", toks, art, pcfg)
        _, v_mean = baseline_word_vectors("meanpool", toks, pos, art)
        _, v_lin = baseline_word_vectors("linear_map", toks, pos, art)
        np.testing.assert_array_equal(v_mean, v_lin)
        assert apply_baseline("meanpool", toks, pos, art) == apply_baseline("linear_map", toks, pos, art)


def test_sentences_without_oov_decode_identically(world):
    corpus, teacher, art = world
    pcfg = PredictionConfig()
    checked = 0
    for s in corpus.sentences:
        if any(is_oov(teacher.vocab.frequency(w), 5) for w in s.tokens):
            continue
        checked += 1
        plain = [teacher.labels[j] for j in teacher.predict(s.tokens)]
        for kind in KINDS:
            pos = baseline_positions(kind, s.tokens, art, pcfg)
            assert pos == []
            ref = art.single_unk_teacher if kind == "single_unk" else teacher
            assert apply_baseline(kind, s.tokens, pos, art) == [ref.labels[j] for j in ref.predict(s.tokens)]
            if kind != "single_unk":
                assert apply_baseline(kind, s.tokens, pos, art) == plain
    assert checked > 0


def test_random_unk_only_replaces_unseen_words(world):
    corpus, teacher, art = world
    rare = min(teacher.vocab.freq, key=teacher.vocab.freq.get)
    assert 0 < teacher.vocab.frequency(rare) < 5
    toks = [rare, "novel"]
    assert baseline_positions("random_unk", toks, art, PredictionConfig()) == [1]
    assert baseline_positions("meanpool", toks, art, PredictionConfig()) == [0, 1]
    assert baseline_positions("meanpool", toks, art, PredictionConfig(replace_mode="unseen-only")) == [1]


def test_single_unk_substitutes_trained_unk_row(world):
    _, _, art = world
    t, vecs = baseline_word_vectors("single_unk", ["a", "b"], [0, 1], art)
    np.testing.assert_array_equal(vecs[0], t.params["emb.word"].data[t.vocab.unk_id])


def test_missing_artifact_is_reported():
    with pytest.raises(MissingArtifact, match="linear_map"):
        baseline_word_vectors("linear_map", ["a"], [0], BaselineArtifacts(teacher=None))
    with pytest.raises(ValueError):
        baseline_word_vectors("nope", ["a"], [0], BaselineArtifacts())


def _least_squares_problem(seed=0, n=240, d=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    B = rng.normal(size=(d, d))
    Y = X @ B.T + 0.1 * rng.normal(size=(n, d))
    return X, Y


def test_linear_map_reaches_least_squares_optimum():
    X, Y = _least_squares_problem()
    # normal equations: (X^T X) A^T = X^T Y
    A_star = np.linalg.solve(X.T @ X, X.T @ Y).T
    best = linear_map_loss(A_star, X, Y)
    fitted = fit_linear_map_pairs(X, Y, epochs=300, lr=1e-2)
    assert linear_map_loss(fitted.A, X, Y) <= 1.01 * best


def test_linear_map_loss_non_increasing_on_synthetic():
    from oovtag.synth import gen_synthetic

    data = gen_synthetic(vocab_size=60, n_test_words=10, n_train=300, n_dev=5, n_test=5, seed=1)
    cfg = Config(**TINY)
    teacher = make_teacher(data.train, cfg, seed=0)
    X, Y = reconstruction_pairs(data.train, teacher, 5)
    assert X.shape[0] > 100
    curve = []
    fit_linear_map_pairs(X, Y, epochs=10, curve=curve)
    start = linear_map_loss(np.eye(X.shape[1]), X, Y)
    losses = [start] + curve
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:])), losses


def test_fit_linear_map_on_corpus(world):
    corpus, teacher, _ = world
    lm = fit_linear_map(corpus, teacher, teacher.cfg, epochs=2)
    assert lm.A.shape == (4, 4)


def test_recon_student_trains_and_leaves_teacher(world):
    corpus, teacher, _ = world
    before = dumps(teacher.to_archive())
    curve = []
    train_recon_student(teacher, corpus, None, teacher.cfg.replace(max_epochs=2), curve=curve)
    assert dumps(teacher.to_archive()) == before
    assert curve[0]["train_loss"] > curve[1]["train_loss"]


@pytest.mark.parametrize("kind", KINDS)
def test_baseline_archives_round_trip(tmp_path, world, kind):
    _, teacher, art = world
    cfg = teacher.cfg
    save_baseline(tmp_path / "a.oovd", kind, art, cfg)
    got_kind, back = load_baseline(tmp_path / "a.oovd", teacher)
    assert got_kind == kind
    save_baseline(tmp_path / "b.oovd", kind, back, cfg)
    assert (tmp_path / "a.oovd").read_bytes() == (tmp_path / "b.oovd").read_bytes()
    toks = ["novel", "w01", "w02"]
    pcfg = PredictionConfig()
    assert apply_baseline(kind, toks, baseline_positions(kind, toks, back, pcfg), back) == \
        apply_baseline(kind, toks, baseline_positions(kind, toks, _rounded(art, kind), pcfg), _rounded(art, kind))


def _rounded(art, kind):
    """Artifacts as they look after one trip through 32-bit storage."""
    _, back = load_baseline_bytes(dumps(baseline_archive(kind, art, art.teacher.cfg)), art.teacher)
    return back


def load_baseline_bytes(payload, teacher):
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "x.oovd"
        p.write_bytes(payload)
        return load_baseline(p, teacher)
