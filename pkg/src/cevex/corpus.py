"""Data model, corpus I/O, synthetic corpus generation, and task-stream partitioning.

A corpus is a list of token-level annotated sentences plus an event schema.
For continual training the event types are partitioned into K disjoint tasks;
each task gets train/dev/test views. Train views expose only the task's own
annotations (everything else is masked to NA but kept around so tests and
audits can score against the withheld gold).
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

NA_LABEL = "NA"

CORPUS_FILENAME = "corpus.jsonl"
SCHEMA_FILENAME = "schema.json"


class CorpusError(ValueError):
    """Malformed corpus data or a violated data-model invariant."""


@dataclass(frozen=True)
class EntitySpan:
    """Token span (end inclusive) of a candidate argument entity."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.start > self.end:
            raise CorpusError(f"invalid entity span ({self.start}, {self.end})")


@dataclass(frozen=True)
class ArgumentMention:
    entity_start: int
    entity_end: int
    role: str

    def span(self) -> EntitySpan:
        return EntitySpan(self.entity_start, self.entity_end)


@dataclass(frozen=True)
class EventMention:
    trigger_start: int
    trigger_end: int
    event_type: str
    arguments: tuple[ArgumentMention, ...] = ()
    pseudo: bool = False  # assigned by a model above threshold, not annotated

    def __post_init__(self) -> None:
        if self.trigger_start < 0 or self.trigger_start > self.trigger_end:
            raise CorpusError(
                f"invalid trigger span ({self.trigger_start}, {self.trigger_end})"
            )
        if self.event_type == NA_LABEL:
            raise CorpusError("NA is implicit for unlabeled tokens, never a mention type")

    def trigger_tokens(self) -> range:
        return range(self.trigger_start, self.trigger_end + 1)

    def trigger_span(self) -> tuple[int, int]:
        return (self.trigger_start, self.trigger_end)


@dataclass(frozen=True)
class TokenizedSentence:
    sentence_id: str
    tokens: tuple[str, ...]
    events: tuple[EventMention, ...] = ()
    entities: tuple[EntitySpan, ...] = ()

    def __len__(self) -> int:
        return len(self.tokens)

    def covered_tokens(self) -> set[int]:
        """Token indices inside any trigger span (gold or pseudo)."""
        covered: set[int] = set()
        for ev in self.events:
            covered.update(ev.trigger_tokens())
        return covered

    def with_events(self, events: Iterable[EventMention]) -> "TokenizedSentence":
        return replace(self, events=tuple(events))


@dataclass(frozen=True)
class EventSchema:
    event_types: tuple[str, ...]
    roles_of: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        if len(set(self.event_types)) != len(self.event_types):
            raise CorpusError("event type names must be unique")
        if NA_LABEL in self.event_types:
            raise CorpusError(f"{NA_LABEL!r} cannot be a schema event type")
        for etype in self.roles_of:
            if etype not in self.event_types:
                raise CorpusError(f"roles declared for unknown event type {etype!r}")

    def roles(self, event_type: str) -> tuple[str, ...]:
        return tuple(self.roles_of.get(event_type, ()))


def validate_sentence(sentence: TokenizedSentence, schema: EventSchema) -> None:
    """Check offsets and schema membership; raise CorpusError on violation."""
    n = len(sentence.tokens)
    if n == 0:
        raise CorpusError(f"sentence {sentence.sentence_id!r} has no tokens")
    seen_pairs: set[tuple[tuple[int, int], str]] = set()
    for ev in sentence.events:
        if ev.trigger_end >= n:
            raise CorpusError(
                f"sentence {sentence.sentence_id!r}: trigger span "
                f"({ev.trigger_start}, {ev.trigger_end}) exceeds length {n}"
            )
        if ev.event_type not in schema.event_types:
            raise CorpusError(
                f"sentence {sentence.sentence_id!r}: unknown event type {ev.event_type!r}"
            )
        key = (ev.trigger_span(), ev.event_type)
        if key in seen_pairs:
            raise CorpusError(
                f"sentence {sentence.sentence_id!r}: duplicate (span, type) pair {key}"
            )
        seen_pairs.add(key)
        roles = schema.roles(ev.event_type)
        for arg in ev.arguments:
            if arg.entity_end >= n:
                raise CorpusError(
                    f"sentence {sentence.sentence_id!r}: argument span "
                    f"({arg.entity_start}, {arg.entity_end}) exceeds length {n}"
                )
            if arg.role not in roles:
                raise CorpusError(
                    f"sentence {sentence.sentence_id!r}: role {arg.role!r} not in "
                    f"schema for {ev.event_type!r}"
                )
    for ent in sentence.entities:
        if ent.end >= n:
            raise CorpusError(
                f"sentence {sentence.sentence_id!r}: entity span "
                f"({ent.start}, {ent.end}) exceeds length {n}"
            )


def has_argument_annotations(sentences: Iterable[TokenizedSentence]) -> bool:
    return any(s.entities or any(ev.arguments for ev in s.events) for s in sentences)


# ---------------------------------------------------------------------------
# JSON (de)serialization.
# Corpus files are UTF-8 JSON-lines, one sentence per line; offsets are
# 0-based token indices with inclusive ends. Schema files are a single JSON
# object {"types": [...], "roles": {type: [...]}}.
# ---------------------------------------------------------------------------


def sentence_to_json(sentence: TokenizedSentence) -> dict:
    events = []
    for ev in sentence.events:
        obj: dict = {
            "trigger": [ev.trigger_start, ev.trigger_end],
            "type": ev.event_type,
            "args": [
                {"span": [a.entity_start, a.entity_end], "role": a.role}
                for a in ev.arguments
            ],
        }
        if ev.pseudo:
            obj["pseudo"] = True
        events.append(obj)
    return {
        "id": sentence.sentence_id,
        "tokens": list(sentence.tokens),
        "events": events,
        "entities": [[e.start, e.end] for e in sentence.entities],
    }


def sentence_from_json(obj: dict) -> TokenizedSentence:
    try:
        events = tuple(
            EventMention(
                trigger_start=int(ev["trigger"][0]),
                trigger_end=int(ev["trigger"][1]),
                event_type=str(ev["type"]),
                arguments=tuple(
                    ArgumentMention(int(a["span"][0]), int(a["span"][1]), str(a["role"]))
                    for a in ev.get("args", [])
                ),
                pseudo=bool(ev.get("pseudo", False)),
            )
            for ev in obj.get("events", [])
        )
        entities = tuple(EntitySpan(int(e[0]), int(e[1])) for e in obj.get("entities", []))
        return TokenizedSentence(
            sentence_id=str(obj["id"]),
            tokens=tuple(str(t) for t in obj["tokens"]),
            events=events,
            entities=entities,
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise CorpusError(f"malformed sentence object: {exc}") from exc


def schema_to_json(schema: EventSchema) -> dict:
    return {
        "types": list(schema.event_types),
        "roles": {t: list(schema.roles(t)) for t in schema.event_types},
    }


def schema_from_json(obj: dict) -> EventSchema:
    try:
        types = tuple(str(t) for t in obj["types"])
        roles = {str(t): tuple(str(r) for r in rs) for t, rs in obj.get("roles", {}).items()}
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"malformed schema object: {exc}") from exc
    return EventSchema(event_types=types, roles_of=roles)


def _resolve_corpus_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    if path.is_dir():
        return path / CORPUS_FILENAME, path / SCHEMA_FILENAME
    return path, path.parent / SCHEMA_FILENAME


def load_corpus(path: str | Path) -> tuple[EventSchema, list[TokenizedSentence]]:
    """Load a corpus directory (or .jsonl file with a sibling schema.json).

    Every mention is validated against the schema; the first malformed line
    raises a CorpusError naming the line number.
    """
    corpus_path, schema_path = _resolve_corpus_paths(path)
    if not corpus_path.exists():
        raise CorpusError(f"corpus file not found: {corpus_path}")
    if not schema_path.exists():
        raise CorpusError(f"schema file not found: {schema_path}")
    with open(schema_path, encoding="utf-8") as fh:
        try:
            schema = schema_from_json(json.load(fh))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{schema_path}: invalid JSON: {exc}") from exc

    sentences: list[TokenizedSentence] = []
    seen_ids: set[str] = set()
    with open(corpus_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                sentence = sentence_from_json(json.loads(line))
            except (json.JSONDecodeError, CorpusError) as exc:
                raise CorpusError(f"{corpus_path}: line {lineno}: {exc}") from exc
            try:
                validate_sentence(sentence, schema)
            except CorpusError as exc:
                raise CorpusError(f"{corpus_path}: line {lineno}: {exc}") from exc
            if sentence.sentence_id in seen_ids:
                raise CorpusError(
                    f"{corpus_path}: line {lineno}: duplicate sentence id "
                    f"{sentence.sentence_id!r}"
                )
            seen_ids.add(sentence.sentence_id)
            sentences.append(sentence)
    return schema, sentences


def save_corpus(
    schema: EventSchema, sentences: Sequence[TokenizedSentence], directory: str | Path
) -> Path:
    """Write corpus.jsonl + schema.json into `directory`; returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / SCHEMA_FILENAME, "w", encoding="utf-8") as fh:
        json.dump(schema_to_json(schema), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(directory / CORPUS_FILENAME, "w", encoding="utf-8") as fh:
        for sentence in sentences:
            fh.write(json.dumps(sentence_to_json(sentence), sort_keys=True))
            fh.write("\n")
    return directory


def corpus_bytes(schema: EventSchema, sentences: Sequence[TokenizedSentence]) -> bytes:
    """Canonical byte serialization, used for determinism checks."""
    lines = [json.dumps(schema_to_json(schema), sort_keys=True)]
    lines += [json.dumps(sentence_to_json(s), sort_keys=True) for s in sentences]
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Synthetic corpus generation.
# Each event type gets its own small trigger vocabulary, so types are
# learnable by a from-scratch encoder. Argument roles are backed by dedicated
# entity-token pools, making role classification learnable as well. Sentences
# may carry mentions of two different types (multi-type sentences), which is
# what later produces NA-masked annotations across tasks.
# ---------------------------------------------------------------------------


def power_law_counts(n_types: int, max_count: int, min_count: int) -> list[int]:
    """Instance counts max..min following count_i = max * (i+1)^-a, clipped at min."""
    if n_types < 1:
        raise CorpusError("n_types must be >= 1")
    if min_count < 1 or max_count < min_count:
        raise CorpusError("need max_count >= min_count >= 1")
    if n_types == 1:
        return [max_count]
    a = math.log(max_count / min_count) / math.log(n_types)
    return [max(min_count, round(max_count * (i + 1) ** (-a))) for i in range(n_types)]


def generate_synthetic(
    n_types: int,
    instances_per_type: Sequence[int],
    vocab_size: int,
    seed: int,
    *,
    multi_type_prob: float = 0.3,
    negative_ratio: float = 0.25,
    include_arguments: bool = True,
    triggers_per_type: int = 3,
    trigger_ambiguity: float = 0.5,
) -> tuple[EventSchema, list[TokenizedSentence]]:
    """Generate a deterministic synthetic corpus with the requested mention counts.

    `instances_per_type[i]` is the exact number of mentions emitted for type i.
    With probability `multi_type_prob` a sentence hosts two mentions of
    different types. With probability `trigger_ambiguity` a mention uses a
    trigger word shared with a neighboring type instead of a dedicated one;
    every positive sentence also carries that type's context-cue token, so
    ambiguous triggers stay decidable from context. Negative (event-free)
    sentences are appended at a ratio of `negative_ratio` to the positive
    sentence count.
    """
    if n_types < 1:
        raise CorpusError("n_types must be >= 1")
    if len(instances_per_type) != n_types:
        raise CorpusError(
            f"instances_per_type has {len(instances_per_type)} entries, expected {n_types}"
        )
    if any(c < 1 for c in instances_per_type):
        raise CorpusError("every type needs at least one instance")
    if vocab_size < 5:
        raise CorpusError("vocab_size must be >= 5")

    rng = random.Random(f"synthetic:{seed}")
    types = [f"EV{i:02d}" for i in range(n_types)]
    letters = "abcdefghij"
    own_triggers = {
        t: [f"trg{i:02d}{letters[k]}" for k in range(triggers_per_type)]
        for i, t in enumerate(types)
    }
    shared_triggers = [f"amb{i:02d}" for i in range(n_types)]
    cue_of = {t: f"cue{i:02d}" for i, t in enumerate(types)}
    fillers = [f"w{k}" for k in range(vocab_size)]

    def pick_trigger(type_index: int) -> str:
        if n_types > 1 and rng.random() < trigger_ambiguity:
            # shared_triggers[i] is used by both type i and type i+1
            return rng.choice(
                [shared_triggers[type_index], shared_triggers[(type_index - 1) % n_types]]
            )
        return rng.choice(own_triggers[types[type_index]])

    n_roles = max(3, (n_types + 1) // 2)
    role_pool = [f"role{r:02d}" for r in range(n_roles)]
    role_entities = {r: [f"ent{i:02d}{letters[k]}" for k in range(4)] for i, r in enumerate(role_pool)}
    distractor_entities = [f"obj{k:02d}" for k in range(8)]
    roles_of = {t: tuple(rng.sample(role_pool, 2)) for t in types}
    if not include_arguments:
        roles_of = {t: () for t in types}

    schema = EventSchema(event_types=tuple(types), roles_of=roles_of)

    # One slot per requested mention; pop pairs of distinct types for
    # multi-type sentences so counts stay exact.
    slots: list[str] = []
    for t, count in zip(types, instances_per_type):
        slots.extend([t] * count)
    rng.shuffle(slots)

    grouped: list[list[str]] = []
    while slots:
        first = slots.pop()
        group = [first]
        if slots and rng.random() < multi_type_prob:
            for k in range(len(slots) - 1, -1, -1):
                if slots[k] != first:
                    group.append(slots.pop(k))
                    break
        grouped.append(group)

    sentences: list[TokenizedSentence] = []

    def build_sentence(sid: str, event_types: list[str]) -> TokenizedSentence:
        # Items are assembled first, then shuffled into token positions.
        items: list[tuple] = [("f", rng.choice(fillers)) for _ in range(rng.randint(5, 9))]
        planned_events: list[tuple[int, str, list[tuple[int, str]]]] = []
        for ev_idx, etype in enumerate(event_types):
            items.append(("trg", ev_idx, pick_trigger(types.index(etype))))
            items.append(("f", cue_of[etype]))
            arg_plan: list[tuple[int, str]] = []
            if include_arguments:
                n_args = rng.choices([0, 1, 2], weights=[0.2, 0.5, 0.3])[0]
                for a_idx in range(n_args):
                    role = roles_of[etype][a_idx % len(roles_of[etype])]
                    word = rng.choice(role_entities[role])
                    items.append(("ent", (ev_idx, a_idx), word))
                    arg_plan.append((a_idx, role))
            planned_events.append((ev_idx, etype, arg_plan))
        if include_arguments and rng.random() < 0.5:
            items.append(("ent", ("distractor", len(items)), rng.choice(distractor_entities)))
        rng.shuffle(items)

        tokens: list[str] = []
        trigger_pos: dict[int, int] = {}
        entity_pos: dict[tuple, int] = {}
        entity_order: list[tuple] = []
        for item in items:
            pos = len(tokens)
            if item[0] == "f":
                tokens.append(item[1])
            elif item[0] == "trg":
                trigger_pos[item[1]] = pos
                tokens.append(item[2])
            else:
                entity_pos[item[1]] = pos
                entity_order.append(item[1])
                tokens.append(item[2])

        events = []
        for ev_idx, etype, arg_plan in planned_events:
            pos = trigger_pos[ev_idx]
            args = tuple(
                ArgumentMention(entity_pos[(ev_idx, a_idx)], entity_pos[(ev_idx, a_idx)], role)
                for a_idx, role in arg_plan
            )
            events.append(EventMention(pos, pos, etype, arguments=args))
        entities = tuple(
            EntitySpan(entity_pos[key], entity_pos[key])
            for key in sorted(entity_order, key=lambda k: entity_pos[k])
        )
        return TokenizedSentence(
            sentence_id=sid, tokens=tuple(tokens), events=tuple(events), entities=entities
        )

    for idx, group in enumerate(grouped):
        sentences.append(build_sentence(f"s{idx:05d}", group))

    n_negatives = round(negative_ratio * len(grouped))
    for k in range(n_negatives):
        tokens = [rng.choice(fillers) for _ in range(rng.randint(6, 11))]
        if rng.random() < 0.3:
            # stray cue without any trigger, so cues alone never imply a label
            tokens.insert(rng.randrange(len(tokens) + 1), rng.choice(list(cue_of.values())))
        entities: tuple[EntitySpan, ...] = ()
        if include_arguments and rng.random() < 0.5:
            pos = rng.randrange(len(tokens) + 1)
            tokens.insert(pos, rng.choice(distractor_entities))
            entities = (EntitySpan(pos, pos),)
        sentences.append(
            TokenizedSentence(
                sentence_id=f"n{k:05d}", tokens=tuple(tokens), entities=entities
            )
        )

    for sentence in sentences:
        validate_sentence(sentence, schema)
    return schema, sentences


# ---------------------------------------------------------------------------
# Task stream.
# ---------------------------------------------------------------------------


@dataclass
class TaskView:
    """One task's data: visible train view plus dev/test sentence selections.

    Dev and test sentences keep their full gold annotations; scoring at stage i
    filters to the types seen so far. Train sentences expose only this task's
    annotations; everything masked away is in `masked_train_events`.
    """

    task_types: tuple[str, ...]
    train: list[TokenizedSentence]
    dev: list[TokenizedSentence]
    test: list[TokenizedSentence]
    masked_train_events: dict[str, tuple[EventMention, ...]] = field(default_factory=dict)


@dataclass
class TaskStream:
    schema: EventSchema
    n_tasks: int
    type_partition: tuple[tuple[str, ...], ...]
    tasks: list[TaskView]
    permutation_seed: int
    train_type_counts: dict[str, int]
    gold_by_id: dict[str, TokenizedSentence]

    def seen_types(self, stage: int) -> tuple[str, ...]:
        self._check_stage(stage)
        seen: list[str] = []
        for g in range(stage):
            seen.extend(self.type_partition[g])
        return tuple(seen)

    def task_of_type(self, event_type: str) -> int:
        for g, group in enumerate(self.type_partition):
            if event_type in group:
                return g + 1
        raise CorpusError(f"unknown event type {event_type!r}")

    def accumulated_test(self, stage: int) -> list[TokenizedSentence]:
        """Union of test views for tasks 1..stage, deduplicated by sentence id."""
        self._check_stage(stage)
        return self._accumulate(stage, "test")

    def accumulated_dev(self, stage: int) -> list[TokenizedSentence]:
        self._check_stage(stage)
        return self._accumulate(stage, "dev")

    def _accumulate(self, stage: int, split: str) -> list[TokenizedSentence]:
        out: list[TokenizedSentence] = []
        seen_ids: set[str] = set()
        for g in range(stage):
            for sentence in getattr(self.tasks[g], split):
                if sentence.sentence_id not in seen_ids:
                    seen_ids.add(sentence.sentence_id)
                    out.append(sentence)
        return out

    def _check_stage(self, stage: int) -> None:
        if not 1 <= stage <= self.n_tasks:
            raise CorpusError(f"stage {stage} out of range 1..{self.n_tasks}")


def accumulated_test(stream: TaskStream, stage: int) -> list[TokenizedSentence]:
    return stream.accumulated_test(stage)


def _sentence_types(sentence: TokenizedSentence) -> set[str]:
    return {ev.event_type for ev in sentence.events}


def partition_tasks(
    schema: EventSchema,
    sentences: Sequence[TokenizedSentence],
    n_tasks: int,
    seed: int,
    *,
    train_frac: float = 0.7,
    dev_frac: float = 0.1,
) -> TaskStream:
    """Split event types into `n_tasks` disjoint groups and build per-task views.

    Types are shuffled by `seed` and dealt round-robin, so group sizes differ
    by at most one. Positive sentences are split train/dev/test by a seeded
    shuffle, then topped up so every type keeps at least one train mention and
    (when its data allows) at least one test and dev mention. Negative
    sentences go round-robin into the task train views.
    """
    types = list(schema.event_types)
    if n_tasks < 1 or n_tasks > len(types):
        raise CorpusError(f"cannot split {len(types)} types into {n_tasks} tasks")
    if train_frac <= 0 or dev_frac < 0 or train_frac + dev_frac >= 1:
        raise CorpusError("need 0 < train_frac, 0 <= dev_frac, train_frac + dev_frac < 1")

    shuffled = types[:]
    random.Random(f"{seed}:types").shuffle(shuffled)
    partition = tuple(tuple(shuffled[g::n_tasks]) for g in range(n_tasks))

    positives = [s for s in sentences if s.events]
    negatives = [s for s in sentences if not s.events]

    order = positives[:]
    random.Random(f"{seed}:split").shuffle(order)
    n_train = round(train_frac * len(order))
    n_dev = round(dev_frac * len(order))
    assign: dict[str, str] = {}
    for i, sentence in enumerate(order):
        if i < n_train:
            assign[sentence.sentence_id] = "train"
        elif i < n_train + n_dev:
            assign[sentence.sentence_id] = "dev"
        else:
            assign[sentence.sentence_id] = "test"

    split_counts: dict[str, Counter] = {"train": Counter(), "dev": Counter(), "test": Counter()}
    for sentence in positives:
        for ev in sentence.events:
            split_counts[assign[sentence.sentence_id]][ev.event_type] += 1

    def move_one(etype: str, target: str) -> None:
        # Prefer sentences whose removal keeps every contained type in train.
        candidates = [
            s for s in positives
            if assign[s.sentence_id] == "train" and etype in _sentence_types(s)
        ]
        for strict in (True, False):
            for sentence in candidates:
                counts = Counter(ev.event_type for ev in sentence.events)
                check = counts if strict else {etype: counts[etype]}
                if all(split_counts["train"][u] - c >= 1 for u, c in check.items()) and (
                    split_counts["train"][etype] - counts[etype] >= 1
                ):
                    assign[sentence.sentence_id] = target
                    for u, c in counts.items():
                        split_counts["train"][u] -= c
                        split_counts[target][u] += c
                    return

    total_counts = Counter(ev.event_type for s in positives for ev in s.events)
    for target in ("test", "dev"):
        for etype in sorted(types, key=lambda t: (total_counts[t], t)):
            if total_counts[etype] and split_counts[target][etype] == 0:
                move_one(etype, target)

    by_split: dict[str, list[TokenizedSentence]] = {"train": [], "dev": [], "test": []}
    for sentence in positives:
        by_split[assign[sentence.sentence_id]].append(sentence)

    tasks: list[TaskView] = []
    train_type_counts: Counter = Counter()
    for g in range(n_tasks):
        group = set(partition[g])
        train_view: list[TokenizedSentence] = []
        masked: dict[str, tuple[EventMention, ...]] = {}
        for sentence in by_split["train"]:
            visible = tuple(ev for ev in sentence.events if ev.event_type in group)
            if not visible:
                continue
            hidden = tuple(ev for ev in sentence.events if ev.event_type not in group)
            train_view.append(sentence.with_events(visible))
            if hidden:
                masked[sentence.sentence_id] = hidden
            for ev in visible:
                train_type_counts[ev.event_type] += 1
        dev_view = [s for s in by_split["dev"] if _sentence_types(s) & group]
        test_view = [s for s in by_split["test"] if _sentence_types(s) & group]
        tasks.append(
            TaskView(
                task_types=partition[g],
                train=train_view,
                dev=dev_view,
                test=test_view,
                masked_train_events=masked,
            )
        )

    for j, sentence in enumerate(negatives):
        tasks[j % n_tasks].train.append(sentence)

    return TaskStream(
        schema=schema,
        n_tasks=n_tasks,
        type_partition=partition,
        tasks=tasks,
        permutation_seed=seed,
        train_type_counts=dict(train_type_counts),
        gold_by_id={s.sentence_id: s for s in sentences},
    )
