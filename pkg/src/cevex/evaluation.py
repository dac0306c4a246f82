"""Scoring: micro-averaged F1 over trigger mentions and argument triples,
long-tail slices, and backward transfer over the stage-by-task F1 matrix."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .corpus import NA_LABEL, TokenizedSentence

Span = tuple[int, int]
Mention = tuple[Span, str]  # (trigger span, event type)
ArgTriple = tuple[str, Span, str]  # (event type, entity span, role)


class EvalError(ValueError):
    """Predictions reference unknown sentences or an incomplete F1 matrix."""


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def _prf(tp: int, n_pred: int, n_gold: int) -> PRF:
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision, recall, f1)


def gold_trigger_mentions(
    sentences: Iterable[TokenizedSentence], types: set[str] | None = None
) -> dict[str, set[Mention]]:
    """Gold (span, type) mention sets per sentence id, optionally filtered to
    the given type set (used to mask not-yet-seen types at stage i)."""
    out: dict[str, set[Mention]] = {}
    for sentence in sentences:
        mentions = {
            (ev.trigger_span(), ev.event_type)
            for ev in sentence.events
            if not ev.pseudo and (types is None or ev.event_type in types)
        }
        out[sentence.sentence_id] = mentions
    return out


def gold_argument_triples(
    sentences: Iterable[TokenizedSentence], types: set[str] | None = None
) -> dict[str, set[ArgTriple]]:
    out: dict[str, set[ArgTriple]] = {}
    for sentence in sentences:
        triples: set[ArgTriple] = set()
        for ev in sentence.events:
            if ev.pseudo or (types is not None and ev.event_type not in types):
                continue
            for arg in ev.arguments:
                triples.add((ev.event_type, (arg.entity_start, arg.entity_end), arg.role))
        out[sentence.sentence_id] = triples
    return out


def _micro_counts(
    predictions: Mapping[str, Iterable], gold: Mapping[str, set], keep=None
) -> tuple[int, int, int]:
    tp = n_pred = n_gold = 0
    for sid in predictions:
        if sid not in gold:
            raise EvalError(f"predictions reference unknown sentence id {sid!r}")
    for sid, gold_set in gold.items():
        gold_kept = {g for g in gold_set if keep is None or keep(g)}
        pred_set = {p for p in set(predictions.get(sid, ())) if keep is None or keep(p)}
        n_gold += len(gold_kept)
        n_pred += len(pred_set)
        tp += len(pred_set & gold_kept)
    return tp, n_pred, n_gold


def detection_f1(
    predictions: Mapping[str, Iterable[Mention]], gold: Mapping[str, set[Mention]]
) -> PRF:
    """Micro-averaged trigger F1: a prediction counts when both span and type
    match a gold mention. NA never enters the counts."""
    keep = lambda m: m[1] != NA_LABEL
    return _prf(*_micro_counts(predictions, gold, keep))


def argument_f1(
    predictions: Mapping[str, Iterable[ArgTriple]], gold: Mapping[str, set[ArgTriple]]
) -> PRF:
    """Micro-averaged argument F1 over (event type, span, role) triples."""
    return _prf(*_micro_counts(predictions, gold))


def long_tail_slice(
    predictions: Mapping[str, Iterable[Mention]],
    gold: Mapping[str, set[Mention]],
    long_tail_types: set[str],
) -> PRF | None:
    """Detection F1 restricted to long-tailed types; None when the slice has
    no gold mentions (absent, not zero)."""
    keep = lambda m: m[1] in long_tail_types
    tp, n_pred, n_gold = _micro_counts(predictions, gold, keep)
    if n_gold == 0:
        return None
    return _prf(tp, n_pred, n_gold)


# ---------------------------------------------------------------------------
# Continual-learning metrics.
# ---------------------------------------------------------------------------


class F1Matrix:
    """Lower-triangular matrix of F1_{stage, task} values (1-based indices)."""

    def __init__(self, n_tasks: int) -> None:
        self.n_tasks = n_tasks
        self._values: dict[tuple[int, int], float] = {}

    def set(self, stage: int, task: int, value: float) -> None:
        if not 1 <= task <= stage <= self.n_tasks:
            raise EvalError(f"F1 matrix entry ({stage}, {task}) outside the lower triangle")
        self._values[(stage, task)] = value

    def get(self, stage: int, task: int) -> float:
        try:
            return self._values[(stage, task)]
        except KeyError:
            raise EvalError(f"F1 matrix entry ({stage}, {task}) missing") from None

    def to_lists(self) -> list[list[float | None]]:
        return [
            [self._values.get((i, j)) for j in range(1, self.n_tasks + 1)]
            for i in range(1, self.n_tasks + 1)
        ]

    @classmethod
    def from_lists(cls, rows: Sequence[Sequence[float | None]]) -> "F1Matrix":
        matrix = cls(len(rows))
        for i, row in enumerate(rows, start=1):
            for j, value in enumerate(row, start=1):
                if value is not None:
                    matrix.set(i, j, float(value))
        return matrix


def bwt(f1_matrix: F1Matrix) -> float:
    """Backward transfer: mean over tasks i < K of F1_{K,i} - F1_{i,i}.

    Negative under forgetting; exactly 0 when final scores match the scores at
    learning time.
    """
    K = f1_matrix.n_tasks
    if K < 2:
        raise EvalError("backward transfer needs at least 2 tasks")
    return sum(f1_matrix.get(K, i) - f1_matrix.get(i, i) for i in range(1, K)) / (K - 1)


@dataclass
class StageReport:
    stage: int
    detection: PRF
    argument: PRF | None = None
    long_tail: PRF | None = None
    per_type_gold_counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "detection": list(self.detection),
            "argument": list(self.argument) if self.argument is not None else None,
            "long_tail": list(self.long_tail) if self.long_tail is not None else None,
            "per_type_gold_counts": dict(sorted(self.per_type_gold_counts.items())),
        }
