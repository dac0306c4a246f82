"""Continual argument extraction conditioned on detected event types.

An entity tagger (own encoder + BiLSTM + transition-constrained BIO decoding)
proposes candidate spans; a second encoder produces span features by
concatenating start and end token representations; per-event-type linear
softmax heads classify each candidate into the type's roles or None. The
argument side keeps its own replay memory but uses no distillation or
prototype transfer.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from . import evaluation
from .corpus import EntitySpan, TaskStream, TokenizedSentence
from .detection import (
    PROB_FLOOR,
    _chunks,
    _copy_state,
    derive_seed,
    make_batch,
)
from .encoder import EncoderConfig, FeatureProjector, ToyTokenEncoder, Vocabulary
from .memory import Exemplar, MemoryStore, select_exemplars

logger = logging.getLogger(__name__)

NONE_ROLE = "<none>"

BIO_O, BIO_B, BIO_I = 0, 1, 2
# I may only continue a started entity: O or sequence start cannot precede I.
_ALLOWED = {
    BIO_O: (BIO_O, BIO_B),
    BIO_B: (BIO_O, BIO_B, BIO_I),
    BIO_I: (BIO_O, BIO_B, BIO_I),
}


class ArgumentError(ValueError):
    """Invalid argument-model state or inputs."""


def bio_labels(sentence: TokenizedSentence) -> list[int]:
    labels = [BIO_O] * len(sentence)
    for ent in sentence.entities:
        if any(labels[j] != BIO_O for j in range(ent.start, ent.end + 1)):
            continue  # overlapping annotation, first span wins
        labels[ent.start] = BIO_B
        for j in range(ent.start + 1, ent.end + 1):
            labels[j] = BIO_I
    return labels


def viterbi_decode(emissions: torch.Tensor) -> list[EntitySpan]:
    """Best BIO path under hard transition constraints, then span extraction."""
    n = emissions.shape[0]
    scores = emissions.detach().cpu().numpy()
    neg = float("-inf")
    dp = np.full((n, 3), neg)
    back = np.zeros((n, 3), dtype=int)
    dp[0, BIO_O] = scores[0, BIO_O]
    dp[0, BIO_B] = scores[0, BIO_B]  # a sequence cannot open with I
    for t in range(1, n):
        for tag in range(3):
            best_prev, best_score = -1, neg
            for prev in range(3):
                if tag not in _ALLOWED[prev] or dp[t - 1, prev] == neg:
                    continue
                if dp[t - 1, prev] > best_score:
                    best_prev, best_score = prev, dp[t - 1, prev]
            if best_prev >= 0:
                dp[t, tag] = best_score + scores[t, tag]
                back[t, tag] = best_prev
    tags = [int(dp[n - 1].argmax())]
    for t in range(n - 1, 0, -1):
        tags.append(int(back[t, tags[-1]]))
    tags.reverse()

    spans: list[EntitySpan] = []
    start: int | None = None
    for j, tag in enumerate(tags + [BIO_O]):
        if tag == BIO_B:
            if start is not None:
                spans.append(EntitySpan(start, j - 1))
            start = j
        elif tag != BIO_I and start is not None:
            spans.append(EntitySpan(start, j - 1))
            start = None
    return spans


def encode_candidate(sentence_features: torch.Tensor, span: EntitySpan) -> torch.Tensor:
    """Concatenated start and end token representations, shape [2h]."""
    return torch.cat([sentence_features[span.start], sentence_features[span.end]])


def role_loss(role_probs: torch.Tensor, gold_roles: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over candidate entities against role-or-None labels."""
    picked = role_probs.gather(1, gold_roles[:, None]).squeeze(1)
    if bool((picked < PROB_FLOOR).any()):
        logger.warning("role_loss: clamped %d zero probabilities", int((picked < PROB_FLOOR).sum()))
    return -picked.clamp_min(PROB_FLOOR).log().mean()


class EntityTagger(nn.Module):
    """Encoder + BiLSTM emissions; decoding is transition-constrained Viterbi."""

    def __init__(self, encoder: ToyTokenEncoder, hidden_size: int = 32, seed: int = 0) -> None:
        super().__init__()
        self.encoder = encoder
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(seed, 0, "tagger-init"))
            self.lstm = nn.LSTM(
                encoder.d, hidden_size, batch_first=True, bidirectional=True
            )
            self.emission = nn.Linear(2 * hidden_size, 3)
        self.trained = False

    def emissions(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        hidden, _ = self.encoder.forward(ids, mask)
        lengths = mask.sum(dim=1).cpu()
        packed = nn.utils.rnn.pack_padded_sequence(
            hidden, lengths, batch_first=True, enforce_sorted=False
        )
        out, _ = self.lstm(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(
            out, batch_first=True, total_length=ids.shape[1]
        )
        return self.emission(out)

    def decode(self, sentence: TokenizedSentence) -> list[EntitySpan]:
        if not self.trained:
            raise ArgumentError("entity tagger has not been trained yet")
        ids = torch.tensor([self.encoder.vocab.encode(sentence.tokens)], dtype=torch.long)
        mask = torch.ones_like(ids, dtype=torch.bool)
        with torch.no_grad():
            emissions = torch.log_softmax(self.emissions(ids, mask)[0], dim=-1)
        return viterbi_decode(emissions)


class ArgumentModel(nn.Module):
    """Entity tagger plus per-event-type role heads over candidate spans."""

    def __init__(
        self,
        tagger_encoder: ToyTokenEncoder,
        candidate_encoder: ToyTokenEncoder,
        feature_dim: int,
        roles_of: Mapping[str, Sequence[str]],
        dropout_rate: float = 0.2,
        seed: int = 0,
    ) -> None:
        super().__init__()
        self.tagger = EntityTagger(tagger_encoder, seed=seed)
        self.encoder = candidate_encoder
        self.feature_dim = feature_dim
        self.dropout_rate = dropout_rate
        self.roles_of = {t: list(rs) for t, rs in roles_of.items()}
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(seed, 0, "argument-init"))
            self.projector = FeatureProjector(candidate_encoder.d, feature_dim, dropout_rate)
        self.heads = nn.ModuleDict()
        self.seen_types: list[str] = []
        self._seed = seed

    def role_space(self, event_type: str) -> list[str]:
        return [NONE_ROLE] + self.roles_of.get(event_type, [])

    def widen(self, new_types: Sequence[str], seed: int = 0) -> None:
        """Add role heads for newly seen event types; existing heads untouched."""
        for etype in new_types:
            if etype in self.heads:
                raise ArgumentError(f"role head for {etype!r} already exists")
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for etype in new_types:
                n_out = len(self.role_space(etype))
                self.heads[etype] = nn.Linear(2 * self.feature_dim, n_out)
        self.seen_types.extend(new_types)

    def candidate_features(self, sentence: TokenizedSentence) -> torch.Tensor:
        output = self.encoder.encode(sentence)
        return self.projector(output.hidden)

    def tag_entities(self, sentence: TokenizedSentence) -> list[EntitySpan]:
        return self.tagger.decode(sentence)

    def role_probabilities(
        self, features: torch.Tensor, event_type: str, spans: Sequence[EntitySpan]
    ) -> torch.Tensor:
        if event_type not in self.heads:
            raise ArgumentError(f"no role head for event type {event_type!r}")
        head = self.heads[event_type]
        if not spans:
            return torch.zeros(0, head.out_features)
        stacked = torch.stack([encode_candidate(features, span) for span in spans])
        return torch.softmax(head(stacked), dim=-1)

    def extract_arguments(
        self, sentence: TokenizedSentence, detected_types: Sequence[str]
    ) -> list[tuple[str, EntitySpan, str]]:
        """Assign each tagged entity its argmax role per detected event type;
        None-role entities are dropped."""
        if not detected_types:
            return []
        spans = self.tag_entities(sentence)
        if not spans:
            return []
        with torch.no_grad():
            features = self.candidate_features(sentence)
            out: list[tuple[str, EntitySpan, str]] = []
            for etype in detected_types:
                space = self.role_space(etype)
                probs = self.role_probabilities(features, etype, spans)
                for span, row in zip(spans, probs):
                    role = space[int(row.argmax())]
                    if role != NONE_ROLE:
                        out.append((etype, span, role))
        return out


def save_argument_model(model: ArgumentModel, path: str | Path) -> None:
    torch.save(
        {
            "tagger_encoder_config": model.tagger.encoder.config.__dict__,
            "tagger_vocab": model.tagger.encoder.vocab.tokens,
            "encoder_config": model.encoder.config.__dict__,
            "vocab": model.encoder.vocab.tokens,
            "feature_dim": model.feature_dim,
            "dropout_rate": model.dropout_rate,
            "roles_of": model.roles_of,
            "seen_types": list(model.seen_types),
            "trained_tagger": model.tagger.trained,
            "state": model.state_dict(),
        },
        Path(path),
    )


def load_argument_model(path: str | Path) -> ArgumentModel:
    payload = torch.load(Path(path), weights_only=True)
    tagger_encoder = ToyTokenEncoder(
        Vocabulary.from_token_list(list(payload["tagger_vocab"])),
        EncoderConfig(**payload["tagger_encoder_config"]),
    )
    candidate_encoder = ToyTokenEncoder(
        Vocabulary.from_token_list(list(payload["vocab"])),
        EncoderConfig(**payload["encoder_config"]),
    )
    model = ArgumentModel(
        tagger_encoder,
        candidate_encoder,
        int(payload["feature_dim"]),
        payload["roles_of"],
        float(payload["dropout_rate"]),
    )
    model.widen(list(payload["seen_types"]))
    model.load_state_dict(payload["state"])
    model.tagger.trained = bool(payload["trained_tagger"])
    return model


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------


@dataclass
class ArgumentTrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr_arguments: float = 5e-5
    lr_entities: float = 3e-5
    memory_size: int = 10
    seed: int = 0


@dataclass
class ArgumentTaskLogs:
    stage: int
    tagger_losses: list[float] = field(default_factory=list)
    role_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_f1: float = 0.0


def _candidate_pool(
    sentence: TokenizedSentence, model: ArgumentModel
) -> list[EntitySpan]:
    """Training candidates: gold entity spans plus tagger proposals, deduplicated."""
    spans = {(e.start, e.end) for e in sentence.entities}
    if model.tagger.trained:
        spans.update((s.start, s.end) for s in model.tag_entities(sentence))
    return [EntitySpan(s, e) for s, e in sorted(spans)]


def _gold_role_index(
    sentence: TokenizedSentence, event, span: EntitySpan, space: list[str]
) -> int:
    for arg in event.arguments:
        if (arg.entity_start, arg.entity_end) == (span.start, span.end):
            return space.index(arg.role)
    return 0


def _dev_argument_f1(
    model: ArgumentModel, dev: Sequence[TokenizedSentence], seen: set[str]
) -> float:
    """Argument F1 on dev with gold event types as the detection input."""
    if not dev:
        return 0.0
    gold = evaluation.gold_argument_triples(dev, types=seen)
    preds: dict[str, list] = {}
    for sentence in dev:
        types = sorted(
            {ev.event_type for ev in sentence.events if ev.event_type in seen}
        )
        found = model.extract_arguments(sentence, types)
        preds[sentence.sentence_id] = [
            (etype, (span.start, span.end), role) for etype, span, role in found
        ]
    return evaluation.argument_f1(preds, gold).f1


def train_argument_task(
    model: ArgumentModel,
    stream: TaskStream,
    stage: int,
    arg_memory: MemoryStore | None,
    cfg: ArgumentTrainConfig,
) -> ArgumentTaskLogs:
    """Train tagger and role heads on the current view plus argument memory,
    then select per-type exemplars with the shared k-means procedure."""
    view = stream.tasks[stage - 1]
    logs = ArgumentTaskLogs(stage=stage)
    torch.manual_seed(derive_seed(cfg.seed, stage, "arg-torch"))
    batch_rng = random.Random(derive_seed(cfg.seed, stage, "arg-shuffle"))

    model.widen(list(view.task_types), seed=derive_seed(cfg.seed, stage, "arg-widen"))
    memory_sentences = arg_memory.training_sentences() if arg_memory is not None else []
    data = list(view.train) + memory_sentences

    # Phase 1: entity tagger.
    tagger_opt = torch.optim.Adam(model.tagger.parameters(), lr=cfg.lr_entities)
    ce = nn.CrossEntropyLoss()
    for _ in range(cfg.epochs):
        model.tagger.train()
        order = list(range(len(data)))
        batch_rng.shuffle(order)
        total, n_batches = 0.0, 0
        for chunk in _chunks(order, cfg.batch_size):
            sentences = [data[i] for i in chunk]
            batch = make_batch(sentences, model.tagger.encoder.vocab)
            emissions = model.tagger.emissions(batch.ids, batch.mask)
            labels = torch.zeros_like(batch.ids)
            for row, sentence in enumerate(sentences):
                labels[row, : len(sentence)] = torch.tensor(bio_labels(sentence))
            loss = ce(emissions[batch.mask], labels[batch.mask])
            tagger_opt.zero_grad()
            loss.backward()
            tagger_opt.step()
            total += float(loss.detach())
            n_batches += 1
        logs.tagger_losses.append(total / max(n_batches, 1))
    model.tagger.trained = True
    model.tagger.eval()

    # Phase 2: fixed candidate pools from gold spans plus tagger proposals.
    pools = [_candidate_pool(sentence, model) for sentence in data]

    # Phase 3: role heads (and candidate encoder) with dev-based selection.
    role_params = (
        list(model.encoder.parameters())
        + list(model.projector.parameters())
        + list(model.heads.parameters())
    )
    role_opt = torch.optim.Adam(role_params, lr=cfg.lr_arguments)
    # Same data-retention rule as detection: select on the current task's dev.
    dev = list(view.dev)
    seen = set(view.task_types)
    best_state: dict[str, torch.Tensor] | None = None
    for epoch in range(cfg.epochs):
        model.train()
        model.tagger.eval()
        order = [i for i in range(len(data)) if data[i].events and pools[i]]
        batch_rng.shuffle(order)
        total, n_batches = 0.0, 0
        for chunk in _chunks(order, cfg.batch_size):
            sentences = [data[i] for i in chunk]
            batch = make_batch(sentences, model.encoder.vocab)
            hidden, _ = model.encoder.forward(batch.ids, batch.mask)
            features = model.projector(hidden)
            prob_rows: list[torch.Tensor] = []
            gold_rows: list[int] = []
            for row, i in enumerate(chunk):
                sentence = data[i]
                for event in sentence.events:
                    if event.pseudo or event.event_type not in model.heads:
                        continue
                    space = model.role_space(event.event_type)
                    head = model.heads[event.event_type]
                    stacked = torch.stack(
                        [
                            torch.cat([features[row, s.start], features[row, s.end]])
                            for s in pools[i]
                        ]
                    )
                    prob_rows.append(torch.softmax(head(stacked), dim=-1))
                    gold_rows.extend(
                        _gold_role_index(sentence, event, s, space) for s in pools[i]
                    )
            if not prob_rows:
                continue
            widths = {p.shape[1] for p in prob_rows}
            if len(widths) == 1:
                probs = torch.cat(prob_rows)
                loss = role_loss(probs, torch.tensor(gold_rows, dtype=torch.long))
            else:
                # Heads of different widths: average the per-candidate losses.
                offset, losses = 0, []
                for p in prob_rows:
                    g = torch.tensor(gold_rows[offset : offset + p.shape[0]], dtype=torch.long)
                    offset += p.shape[0]
                    losses.append(-p.gather(1, g[:, None]).squeeze(1).clamp_min(PROB_FLOOR).log())
                loss = torch.cat(losses).mean()
            role_opt.zero_grad()
            loss.backward()
            role_opt.step()
            total += float(loss.detach())
            n_batches += 1
        logs.role_losses.append(total / max(n_batches, 1))
        model.eval()
        dev_f1 = _dev_argument_f1(model, dev, seen)
        if best_state is None or dev_f1 >= logs.best_dev_f1:
            logs.best_dev_f1 = dev_f1
            logs.best_epoch = epoch
            best_state = _copy_state(model)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()

    # Exemplar selection for the argument memory.
    if arg_memory is not None and cfg.memory_size > 0:
        selections: dict[str, list[Exemplar]] = {}
        with torch.no_grad():
            feature_cache = [model.candidate_features(s) for s in view.train]
        for etype in view.task_types:
            instances = [
                (pos, ev)
                for pos, sentence in enumerate(view.train)
                for ev in sentence.events
                if ev.event_type == etype and not ev.pseudo
            ]
            if not instances:
                continue
            vectors = []
            for pos, ev in instances:
                features = feature_cache[pos]
                if ev.arguments:
                    encs = [
                        encode_candidate(features, EntitySpan(a.entity_start, a.entity_end))
                        for a in ev.arguments
                    ]
                    vectors.append(torch.stack(encs).mean(dim=0).numpy())
                else:
                    span = EntitySpan(ev.trigger_start, ev.trigger_end)
                    vectors.append(encode_candidate(features, span).numpy())
            chosen = select_exemplars(
                instances, np.stack(vectors), cfg.memory_size,
                derive_seed(cfg.seed, stage, f"arg-kmeans:{etype}"),
            )
            selections[etype] = [
                Exemplar(
                    sentence_id=view.train[pos].sentence_id,
                    trigger_start=ev.trigger_start,
                    trigger_end=ev.trigger_end,
                    event_type=etype,
                    sentence=view.train[pos],
                )
                for pos, ev in chosen
            ]
        arg_memory.update(selections)
    return logs
