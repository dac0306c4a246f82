"""Experience-replay store with k-means exemplar selection per event type.

Each stored exemplar references a (sentence, trigger span) pair and keeps a
frozen snapshot of the sentence's visible annotations at storage time, so
later pseudo-label updates stay auditable. Negative (NA) instances are never
stored.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np

from .corpus import NA_LABEL, TokenizedSentence, sentence_from_json, sentence_to_json

logger = logging.getLogger(__name__)

T = TypeVar("T")


class MemoryError_(ValueError):
    """Invalid memory operation (duplicate type, NA instance, empty selection)."""


@dataclass(frozen=True)
class Exemplar:
    sentence_id: str
    trigger_start: int
    trigger_end: int
    event_type: str
    sentence: TokenizedSentence


def select_exemplars(
    instances: Sequence[T], features: np.ndarray, m: int, seed: int
) -> list[T]:
    """Pick at most m representative instances by k-means over their features.

    If there are no more than m instances, all are returned. Otherwise k-means
    with k=m runs from a seeded distinct-point initialization (at most 100
    iterations, or until centroids move less than 1e-6), and each cluster
    contributes the instance nearest its centroid (ties break to the lowest
    index).
    """
    if len(instances) == 0:
        raise MemoryError_("cannot select exemplars from an empty instance list")
    if features.shape[0] != len(instances):
        raise MemoryError_(
            f"features ({features.shape[0]}) not aligned with instances ({len(instances)})"
        )
    if len(instances) <= m:
        return list(instances)

    pts = np.asarray(features, dtype=np.float64)
    rng = np.random.default_rng(seed)
    centroids = pts[rng.choice(len(instances), size=m, replace=False)].copy()

    for _ in range(100):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        moved = 0.0
        for c in range(m):
            members = pts[assign == c]
            if len(members):
                new_c = members.mean(axis=0)
                moved = max(moved, float(np.abs(new_c - centroids[c]).max()))
                centroids[c] = new_c
        if moved < 1e-6:
            break

    d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    selected: list[T] = []
    for c in range(m):
        members = np.flatnonzero(assign == c)
        if len(members) == 0:
            continue
        best = members[np.argmin(d2[members, c])]
        selected.append(instances[int(best)])
    return selected


class MemoryStore:
    """Per-type exemplar sets, each bounded by the memory size m."""

    def __init__(self, m: int) -> None:
        if m < 0:
            raise MemoryError_(f"memory size must be >= 0, got {m}")
        self.m = m
        self._store: dict[str, list[Exemplar]] = {}

    @property
    def types(self) -> list[str]:
        return list(self._store)

    def exemplars(self, event_type: str) -> list[Exemplar]:
        return list(self._store.get(event_type, []))

    def __len__(self) -> int:
        return sum(len(v) for v in self._store.values())

    def __contains__(self, event_type: str) -> bool:
        return event_type in self._store

    def update(self, stage_selections: dict[str, list[Exemplar]]) -> None:
        """Add this stage's selections; existing types are untouched and
        re-inserting one is an error."""
        for event_type in stage_selections:
            if event_type == NA_LABEL:
                raise MemoryError_("negative (NA) instances are never stored")
            if event_type in self._store:
                raise MemoryError_(f"type {event_type!r} already has stored exemplars")
        for event_type, exemplars in stage_selections.items():
            if len(exemplars) > self.m:
                raise MemoryError_(
                    f"{len(exemplars)} exemplars for {event_type!r} exceed memory size {self.m}"
                )
            for ex in exemplars:
                if ex.event_type != event_type:
                    raise MemoryError_(
                        f"exemplar of type {ex.event_type!r} stored under {event_type!r}"
                    )
            self._store[event_type] = list(exemplars)

    def replace_snapshot(self, event_type: str, index: int, sentence: TokenizedSentence) -> None:
        ex = self._store[event_type][index]
        self._store[event_type][index] = replace(ex, sentence=sentence)

    def training_sentences(self) -> list[TokenizedSentence]:
        """All exemplar snapshots in deterministic order, one per exemplar.

        A sentence stored under two types appears once per exemplar; the
        snapshots may differ because they were frozen at different stages.
        """
        out: list[TokenizedSentence] = []
        for event_type in self._store:
            out.extend(ex.sentence for ex in self._store[event_type])
        return out

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "store": {
                etype: [
                    {
                        "sentence_id": ex.sentence_id,
                        "span": [ex.trigger_start, ex.trigger_end],
                        "sentence": sentence_to_json(ex.sentence),
                    }
                    for ex in exemplars
                ]
                for etype, exemplars in self._store.items()
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MemoryStore":
        store = cls(int(obj["m"]))
        for etype, items in obj["store"].items():
            store._store[etype] = [
                Exemplar(
                    sentence_id=item["sentence_id"],
                    trigger_start=int(item["span"][0]),
                    trigger_end=int(item["span"][1]),
                    event_type=etype,
                    sentence=sentence_from_json(item["sentence"]),
                )
                for item in items
            ]
        return store

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "MemoryStore":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def update_memory(store: MemoryStore, stage_selections: dict[str, list[Exemplar]]) -> MemoryStore:
    store.update(stage_selections)
    return store
