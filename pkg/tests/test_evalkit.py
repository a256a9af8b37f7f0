import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oovtag.evalkit import Entity, entity_f1, extract_entities, render_bio, token_accuracy


def test_token_accuracy():
    assert token_accuracy([1, 2, 3], [1, 2, 3], [True, True, False]) == 1.0
    assert token_accuracy([1, 0, 3, 0], [1, 2, 3, 4], [True] * 4) == 0.5
    assert token_accuracy([1, 2], [1, 2], [False, False]) is None


def test_extract_entities():
    assert extract_entities(["B-PER", "I-PER", "O"]) == {Entity(0, 0, 2, "PER")}
    assert extract_entities(["O", "I-LOC"]) == {Entity(0, 1, 2, "LOC")}
    assert extract_entities(["O", "O", "O"]) == set()
    assert extract_entities(["B-PER", "I-LOC", "B-PER", "B-PER"]) == {
        Entity(0, 0, 1, "PER"), Entity(0, 1, 2, "LOC"), Entity(0, 2, 3, "PER"), Entity(0, 3, 4, "PER")}


def test_extract_entities_rejects_unknown_labels():
    with pytest.raises(ValueError):
        extract_entities(["NN"])


def test_entity_f1():
    g = {Entity(0, 0, 2, "PER"), Entity(1, 3, 4, "LOC")}
    m = entity_f1(g, g, {e: True for e in g})
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)
    pred = {Entity(0, 0, 2, "PER")}
    m = entity_f1(pred, g, {e: True for e in g})
    assert m.precision == 1.0 and m.recall == 0.5
    assert m.f1 == pytest.approx(2 / 3)
    m = entity_f1(set(), set())
    assert (m.precision, m.recall, m.f1, m.support) == (0.0, 0.0, 0.0, 0)


labels = st.lists(st.sampled_from(["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]), min_size=1, max_size=12)


@given(labels)
def test_render_round_trip(seq):
    ents = extract_entities(seq)
    assert extract_entities(render_bio(ents, len(seq))) == ents


@settings(max_examples=50)
@given(labels, labels)
def test_f1_swap_symmetry(a, b):
    n = min(len(a), len(b))
    pa, pb = extract_entities(a[:n]), extract_entities(b[:n])
    m1, m2 = entity_f1(pa, pb), entity_f1(pb, pa)
    assert m1.precision == m2.recall and m1.recall == m2.precision
    assert m1.f1 == pytest.approx(m2.f1)


@given(labels, st.lists(st.booleans(), min_size=12, max_size=12))
def test_subset_supports_add_up(seq, oov):
    ents = extract_entities(seq)
    mask = {e: bool(np.any(oov[e.start:e.end])) for e in ents}
    o = entity_f1(ents, ents, mask)
    w = entity_f1(ents, ents, {e: not v for e, v in mask.items()})
    assert o.support + w.support == len(ents)
