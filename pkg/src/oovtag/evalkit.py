"""OOV/WIV split evaluation: token accuracy and entity-level F1."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, order=True)
class Entity:
    sentence: int
    start: int
    end: int  # exclusive
    type: str


@dataclass
class Metrics:
    subset: str
    support: int
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    pred_support: int | None = None

    def to_records(self, task: str, split: str) -> list[dict]:
        keys = ("accuracy",) if self.accuracy is not None else ("precision", "recall", "f1")
        return [dict(task=task, split=split, subset=self.subset, metric=k,
                     value=getattr(self, k), support=self.support) for k in keys]


def token_accuracy(pred: Sequence, gold: Sequence, mask=None) -> float | None:
    """Accuracy over masked positions, or None when the mask selects nothing."""
    p, g = np.asarray(pred), np.asarray(gold)
    if p.shape != g.shape:
        raise ValueError(f"prediction length {p.shape} != gold length {g.shape}")
    m = np.ones(p.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n = int(m.sum())
    if n == 0:
        return None
    return float((p[m] == g[m]).sum()) / n


def split_label(label: str) -> tuple[str, str | None]:
    if label == "O":
        return "O", None
    prefix, sep, etype = label.partition("-")
    if not sep or prefix not in ("B", "I") or not etype:
        raise ValueError(f"unknown label {label!r}; expected O, B-T or I-T")
    return prefix, etype


def extract_entities(labels: Sequence[str], sentence: int = 0) -> set[Entity]:
    """Maximal BIO chunks.  A stray I-T opens a new chunk."""
    entities = set()
    start, etype = None, None
    for i, lab in enumerate(labels):
        prefix, t = split_label(lab)
        continues = prefix == "I" and t == etype and start is not None
        if start is not None and not continues:
            entities.add(Entity(sentence, start, i, etype))
            start, etype = None, None
        if prefix != "O" and not continues:
            start, etype = i, t
    if start is not None:
        entities.add(Entity(sentence, start, len(labels), etype))
    return entities


def render_bio(entities: Iterable[Entity], length: int) -> list[str]:
    labels = ["O"] * length
    for e in entities:
        labels[e.start] = f"B-{e.type}"
        for j in range(e.start + 1, e.end):
            labels[j] = f"I-{e.type}"
    return labels


def iob1_to_iob2(labels: Sequence[str]) -> list[str]:
    out = []
    prev_type = None
    for lab in labels:
        prefix, t = split_label(lab)
        if prefix == "I" and t != prev_type:
            out.append(f"B-{t}")
        else:
            out.append(lab)
        prev_type = t
    return out


def entity_is_oov(entity: Entity, token_oov: Sequence[bool]) -> bool:
    return bool(np.any(np.asarray(token_oov[entity.start:entity.end], dtype=bool)))


def prf(n_correct: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = n_correct / n_pred if n_pred else 0.0
    r = n_correct / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def entity_f1(pred_entities: Iterable[Entity], gold_entities: Iterable[Entity],
              oov_entity_mask=None, pred_mask=None, subset: str = "oov") -> Metrics:
    """Exact-match P/R/F1 restricted to a subset.

    ``oov_entity_mask`` maps each gold entity to True when it belongs to the
    subset; ``pred_mask`` does the same for predicted entities (a predicted
    entity counts when it holds at least one subset token).  Either mask may
    be None, meaning "everything".
    """
    gold = {e for e in gold_entities if oov_entity_mask is None or oov_entity_mask[e]}
    pred = {e for e in pred_entities if pred_mask is None or pred_mask[e]}
    n_correct = len(gold & pred)
    p, r, f = prf(n_correct, len(pred), len(gold))
    return Metrics(subset=subset, support=len(gold), precision=p, recall=r, f1=f, pred_support=len(pred))


def write_metrics(path, records: Iterable[dict]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def metrics_dict(m: Metrics) -> dict:
    return {k: v for k, v in asdict(m).items() if v is not None}
