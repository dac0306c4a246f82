"""Continual event-detection model and its per-task training procedure.

The model is a growing token classifier over the seen event types plus NA at
index 0. Per stage it runs, in order: pseudo-label augmentation of the train
view by the previous model, classifier widening, a warm-up pass feeding
prototype computation, main training (classification + feature/prediction
distillation + long-tail feature enhancement) over augmented data and replay
memory, exemplar selection, and memory relabeling.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
from torch import nn

from . import evaluation
from .corpus import NA_LABEL, EventMention, TaskStream, TokenizedSentence
from .encoder import (
    EncoderConfig,
    FeatureProjector,
    ToyTokenEncoder,
    Vocabulary,
)
from .memory import Exemplar, MemoryStore, select_exemplars

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class DetectionError(ValueError):
    """Invalid detection-model state or inputs."""


def derive_seed(base: int, stage: int, purpose: str) -> int:
    """Stable per-(run, stage, purpose) seed so RNG streams stay independent."""
    digest = hashlib.blake2s(f"{base}:{stage}:{purpose}".encode(), digest_size=4).digest()
    return int.from_bytes(digest, "big")


# ---------------------------------------------------------------------------
# Configs.
# ---------------------------------------------------------------------------


@dataclass
class PseudoLabelConfig:
    tau: float = 0.8

    def __post_init__(self) -> None:
        if not 0 < self.tau <= 1:
            raise DetectionError(f"tau must be in (0, 1], got {self.tau}")


@dataclass
class DistillationConfig:
    alpha: float = 1.0
    beta: float = 1.0
    L: int = 3

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise DetectionError("alpha and beta must be >= 0")
        if self.L < 1:
            raise DetectionError("L must be >= 1")


@dataclass
class DetectionTrainConfig:
    epochs: int = 10
    warmup_epochs: int = 1
    batch_size: int = 8
    lr_encoder: float = 5e-5
    lr_classifier: float = 5e-5
    pseudo: PseudoLabelConfig = field(default_factory=PseudoLabelConfig)
    distill: DistillationConfig = field(default_factory=DistillationConfig)
    long_tail_fraction: float = 0.8
    memory_size: int = 10
    enable_da: bool = True
    enable_afd: bool = True
    enable_spd: bool = True
    enable_pkt: bool = True
    seed: int = 0


# ---------------------------------------------------------------------------
# Model.
# ---------------------------------------------------------------------------


class DetectionModel(nn.Module):
    """Encoder + feature projector + growing linear softmax classifier."""

    def __init__(
        self,
        encoder: ToyTokenEncoder,
        feature_dim: int,
        dropout_rate: float = 0.2,
        seed: int = 0,
    ) -> None:
        super().__init__()
        self.encoder = encoder
        self.feature_dim = feature_dim
        self.dropout_rate = dropout_rate
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(seed, 0, "detection-init"))
            self.projector = FeatureProjector(encoder.d, feature_dim, dropout_rate)
            self.classifier = nn.Linear(feature_dim, 1)
        self.label_space: list[str] = [NA_LABEL]

    @property
    def label_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.label_space)}

    def widen(self, new_types: Sequence[str], seed: int = 0) -> None:
        """Grow the classifier for new event types; existing rows are preserved
        and new rows start from a seeded N(0, 0.02^2) draw."""
        index = self.label_index
        for t in new_types:
            if t in index:
                raise DetectionError(f"type {t!r} already in label space")
        n_new = len(new_types)
        if n_new == 0:
            return
        old = self.classifier
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            widened = nn.Linear(self.feature_dim, old.out_features + n_new)
            fresh_w = torch.normal(0.0, 0.02, size=(n_new, self.feature_dim))
        with torch.no_grad():
            widened.weight[: old.out_features] = old.weight
            widened.weight[old.out_features :] = fresh_w
            widened.bias[: old.out_features] = old.bias
            widened.bias[old.out_features :] = 0.0
        self.classifier = widened
        self.label_space.extend(new_types)

    def forward_batch(
        self, ids: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns features [B, T, h] and the attention stack [B, layers, heads, T, T]."""
        hidden, attention = self.encoder.forward(ids, mask)
        return self.projector(hidden), attention

    def classify_tokens(self, sentence: TokenizedSentence) -> torch.Tensor:
        """Probability rows [n_tokens, |seen types| + 1]; NA sits at column 0."""
        output = self.encoder.encode(sentence)
        features = self.projector(output.hidden)
        return torch.softmax(self.classifier(features), dim=-1)

    def token_probabilities(
        self, sentences: Sequence[TokenizedSentence], batch_size: int = 64
    ) -> list[np.ndarray]:
        """Eval-mode probabilities per sentence, aligned with the input order."""
        was_training = self.training
        self.eval()
        out: list[np.ndarray] = []
        with torch.no_grad():
            for start in range(0, len(sentences), batch_size):
                chunk = sentences[start : start + batch_size]
                batch = make_batch(chunk, self.encoder.vocab)
                features, _ = self.forward_batch(batch.ids, batch.mask)
                probs = torch.softmax(self.classifier(features), dim=-1)
                for row, sentence in enumerate(chunk):
                    out.append(probs[row, : len(sentence)].cpu().numpy())
        if was_training:
            self.train()
        return out

    def snapshot(self) -> "DetectionModel":
        """Frozen deep copy in eval mode, used as distillation teacher."""
        snap = copy.deepcopy(self)
        snap.eval()
        for p in snap.parameters():
            p.requires_grad_(False)
        return snap


def save_detection_model(model: DetectionModel, path: str | Path) -> None:
    torch.save(
        {
            "encoder_config": model.encoder.config.__dict__,
            "vocab": model.encoder.vocab.tokens,
            "feature_dim": model.feature_dim,
            "dropout_rate": model.dropout_rate,
            "label_space": list(model.label_space),
            "state": model.state_dict(),
        },
        Path(path),
    )


def load_detection_model(path: str | Path) -> DetectionModel:
    payload = torch.load(Path(path), weights_only=True)
    encoder = ToyTokenEncoder(
        Vocabulary.from_token_list(list(payload["vocab"])),
        EncoderConfig(**payload["encoder_config"]),
    )
    model = DetectionModel(
        encoder, int(payload["feature_dim"]), float(payload["dropout_rate"])
    )
    label_space = list(payload["label_space"])
    model.widen(label_space[1:])
    model.load_state_dict(payload["state"])
    return model


# ---------------------------------------------------------------------------
# Batching.
# ---------------------------------------------------------------------------


@dataclass
class TokenBatch:
    ids: torch.Tensor  # [B, T]
    mask: torch.Tensor  # [B, T] bool, True on real tokens
    labels: torch.Tensor  # [B, T] long, 0 (NA) on unlabeled and padding
    sentences: list[TokenizedSentence]


def token_labels(
    sentence: TokenizedSentence, label_index: Mapping[str, int]
) -> list[int]:
    """Per-token class indices from visible events; the first event covering a
    token wins when trigger spans overlap."""
    labels = [0] * len(sentence)
    for ev in sentence.events:
        idx = label_index.get(ev.event_type)
        if idx is None:
            raise DetectionError(f"event type {ev.event_type!r} outside label space")
        for j in ev.trigger_tokens():
            if labels[j] == 0:
                labels[j] = idx
    return labels


def make_batch(
    sentences: Sequence[TokenizedSentence],
    vocab: Vocabulary,
    label_index: Mapping[str, int] | None = None,
) -> TokenBatch:
    max_len = max(len(s) for s in sentences)
    ids = torch.zeros(len(sentences), max_len, dtype=torch.long)
    mask = torch.zeros(len(sentences), max_len, dtype=torch.bool)
    labels = torch.zeros(len(sentences), max_len, dtype=torch.long)
    for row, sentence in enumerate(sentences):
        n = len(sentence)
        ids[row, :n] = torch.tensor(vocab.encode(sentence.tokens), dtype=torch.long)
        mask[row, :n] = True
        if label_index is not None:
            labels[row, :n] = torch.tensor(token_labels(sentence, label_index))
    return TokenBatch(ids=ids, mask=mask, labels=labels, sentences=list(sentences))


def batch_attentive_features(
    features: torch.Tensor, attention: torch.Tensor, mask: torch.Tensor, L: int
) -> torch.Tensor:
    """Attentive features [B, T, h] using the last L layers' mean attention;
    the 1/|sentence| prefactor uses true lengths, not the padded width."""
    ctx = attention[:, -L:].mean(dim=(1, 2))
    lengths = mask.sum(dim=1).clamp(min=1).to(features.dtype)
    return (ctx @ features) / lengths[:, None, None]


# ---------------------------------------------------------------------------
# Losses. All take probability rows for an already-selected token set and
# return differentiable scalars.
# ---------------------------------------------------------------------------


def classification_loss(probs: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy -1/|N| sum log P(gold | x) over the given token set."""
    picked = probs.gather(1, gold[:, None]).squeeze(1)
    if bool((picked < PROB_FLOOR).any()):
        logger.warning("classification_loss: clamped %d zero probabilities", int((picked < PROB_FLOOR).sum()))
    return -picked.clamp_min(PROB_FLOOR).log().mean()


def afd_loss(student_attentive: torch.Tensor, teacher_attentive: torch.Tensor) -> torch.Tensor:
    """Mean cosine distance 1/|N| sum (1 - cos(A_x_student, A_x_teacher)).

    The printed form of this loss carries a leading minus sign, which would
    reward divergence; the positive distance is used instead so teacher
    features are preserved. Zero-norm rows contribute cosine 0.
    """
    if student_attentive.shape != teacher_attentive.shape:
        raise DetectionError("attentive feature shapes differ between student and teacher")
    if student_attentive.numel() == 0:
        return student_attentive.new_zeros(())
    zero_rows = int(
        ((student_attentive.norm(dim=1) == 0) | (teacher_attentive.norm(dim=1) == 0)).sum()
    )
    if zero_rows:
        logger.warning("afd_loss: %d zero-norm attentive rows, cosine treated as 0", zero_rows)
    cos = torch.nn.functional.cosine_similarity(student_attentive, teacher_attentive, dim=1)
    return (1.0 - cos).mean()


def spd_loss(
    student_probs: torch.Tensor,
    teacher_probs: torch.Tensor,
    keep_mask: torch.Tensor | None,
    n_prev_types: int,
) -> torch.Tensor:
    """Selective prediction distillation over previously seen types.

    -1/|N~| sum_{x in N~} sum_{e in prev} P(e|x; teacher) log P(e|x; student),
    where N~ excludes tokens labeled with a current-task type and the type sum
    skips NA. Student probabilities are read from the full softmax at the
    previous types' indices (columns 1..n_prev), without renormalization.
    """
    if n_prev_types == 0:
        return student_probs.new_zeros(())
    if keep_mask is not None:
        student_probs = student_probs[keep_mask]
        teacher_probs = teacher_probs[keep_mask]
    if student_probs.shape[0] == 0:
        logger.info("spd_loss: empty token set after excluding new-type tokens")
        return student_probs.new_zeros(())
    t = teacher_probs[:, 1 : 1 + n_prev_types]
    s = student_probs[:, 1 : 1 + n_prev_types]
    return -(t * s.clamp_min(PROB_FLOOR).log()).sum(dim=1).mean()


def combined_loss(
    l_cls: torch.Tensor,
    l_afd: torch.Tensor,
    l_spd: torch.Tensor,
    n_prev_types: int,
    n_seen_types: int,
    config: DistillationConfig,
) -> torch.Tensor:
    """(1 - rho) * L_cls + rho * (alpha * L_afd + beta * L_spd), rho = prev/seen."""
    if n_prev_types > n_seen_types:
        raise DetectionError("previous type count exceeds seen type count")
    if n_seen_types == 0:
        return l_cls
    rho = n_prev_types / n_seen_types
    return (1.0 - rho) * l_cls + rho * (config.alpha * l_afd + config.beta * l_spd)


# ---------------------------------------------------------------------------
# Pseudo-label augmentation.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PseudoLabelRecord:
    sentence_id: str
    token: int
    event_type: str
    confidence: float
    source: str  # "train" or "memory"


def apply_pseudo_labels(
    sentence: TokenizedSentence,
    probs: np.ndarray,
    label_space: Sequence[str],
    tau: float,
    source: str = "train",
) -> tuple[TokenizedSentence, list[PseudoLabelRecord]]:
    """Relabel NA tokens whose max non-NA probability reaches tau.

    Tokens covered by any existing mention (gold or pseudo) are never touched,
    so gold annotations take precedence. New pseudo mentions are single-token
    and flagged as pseudo.
    """
    if probs.shape[0] != len(sentence) or probs.shape[1] != len(label_space):
        raise DetectionError("probability matrix does not match sentence/label space")
    covered = sentence.covered_tokens()
    added: list[EventMention] = []
    records: list[PseudoLabelRecord] = []
    for j in range(len(sentence)):
        if j in covered:
            continue
        non_na = probs[j, 1:]
        if non_na.size == 0:
            continue
        best = int(non_na.argmax())
        confidence = float(non_na[best])
        if confidence >= tau:
            etype = label_space[1 + best]
            added.append(EventMention(j, j, etype, pseudo=True))
            records.append(
                PseudoLabelRecord(sentence.sentence_id, j, etype, confidence, source)
            )
    if not added:
        return sentence, records
    return sentence.with_events(tuple(sentence.events) + tuple(added)), records


def augment_with_pseudo_labels(
    sentences: Sequence[TokenizedSentence],
    teacher: DetectionModel,
    tau: float,
    batch_size: int = 64,
) -> tuple[list[TokenizedSentence], list[PseudoLabelRecord]]:
    """Run the previous model over the train view and add confident pseudo labels."""
    probs = teacher.token_probabilities(sentences, batch_size=batch_size)
    augmented: list[TokenizedSentence] = []
    records: list[PseudoLabelRecord] = []
    for sentence, p in zip(sentences, probs):
        new_sentence, recs = apply_pseudo_labels(sentence, p, teacher.label_space, tau, "train")
        augmented.append(new_sentence)
        records.extend(recs)
    return augmented, records


def relabel_memory(
    store: MemoryStore, model: DetectionModel, tau: float, batch_size: int = 64
) -> list[PseudoLabelRecord]:
    """Add pseudo labels to stored exemplar snapshots using the just-trained model.

    Existing annotations (gold and earlier pseudo labels) are kept; only
    still-unlabeled tokens can gain labels.
    """
    records: list[PseudoLabelRecord] = []
    keys = [(etype, i) for etype in store.types for i in range(len(store.exemplars(etype)))]
    snapshots = [store.exemplars(etype)[i].sentence for etype, i in keys]
    if not snapshots:
        return records
    probs = model.token_probabilities(snapshots, batch_size=batch_size)
    for (etype, i), sentence, p in zip(keys, snapshots, probs):
        new_sentence, recs = apply_pseudo_labels(sentence, p, model.label_space, tau, "memory")
        if recs:
            store.replace_snapshot(etype, i, new_sentence)
            records.extend(recs)
    return records


# ---------------------------------------------------------------------------
# Prototypes and long-tail enhancement.
# ---------------------------------------------------------------------------


@dataclass
class Prototype:
    event_type: str
    mu: np.ndarray
    sigma: np.ndarray
    count: int


def compute_prototype(event_type: str, feature_vectors: np.ndarray) -> Prototype:
    """Elementwise mean and population std of a type's token features."""
    feats = np.asarray(feature_vectors, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise DetectionError(f"no feature vectors for type {event_type!r}")
    return Prototype(
        event_type=event_type,
        mu=feats.mean(axis=0),
        sigma=feats.std(axis=0),
        count=feats.shape[0],
    )


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def associated_std(target: Prototype, store: Mapping[str, Prototype]) -> np.ndarray:
    """Weighted sum of the other prototypes' std vectors.

    Weights are cosine similarities between mean vectors; the target's own
    prototype is excluded and negative weights clamp to zero so the result
    stays a valid std.
    """
    total = np.zeros_like(target.sigma, dtype=np.float64)
    any_weight = False
    for etype in sorted(store):
        proto = store[etype]
        if etype == target.event_type:
            continue
        weight = max(0.0, _cosine(target.mu, proto.mu))
        if weight > 0.0:
            any_weight = True
        total += weight * proto.sigma
    if not any_weight:
        logger.info("associated_std: all weights zero for %r", target.event_type)
    return total


def sample_intensive_vector(sigma_assoc: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Elementwise zero-mean Gaussian draw with per-dimension std sigma_assoc."""
    sigma = np.asarray(sigma_assoc, dtype=np.float64)
    if (sigma < 0).any():
        raise DetectionError("associated std must be non-negative")
    return rng.standard_normal(sigma.shape[0]) * sigma


def long_tail_types(counts: Mapping[str, int], fraction: float = 0.8) -> list[str]:
    """The floor(fraction * n) least-frequent types, ties broken by name."""
    ordered = sorted(counts, key=lambda t: (counts[t], t))
    return ordered[: int(fraction * len(ordered))]


def enhance_long_tail(
    features: torch.Tensor,
    token_types: Sequence[str | None],
    long_tail: set[str],
    prototypes: Mapping[str, Prototype],
    rng: np.random.Generator,
) -> torch.Tensor:
    """Add a fresh intensive vector to each token of a long-tailed type.

    f* = f + sample(0, associated_std(type)^2); all other tokens pass through
    unchanged. Training-time only; callers skip this in evaluation mode.
    """
    if len(token_types) != features.shape[0]:
        raise DetectionError("token types not aligned with feature rows")
    rows = [j for j, t in enumerate(token_types) if t is not None and t in long_tail]
    if not rows:
        return features
    sigma_cache: dict[str, np.ndarray] = {}
    additions = np.zeros((len(rows), features.shape[1]), dtype=np.float64)
    for k, j in enumerate(rows):
        etype = token_types[j]
        if etype not in prototypes:
            raise DetectionError(f"no prototype for long-tailed type {etype!r}")
        if etype not in sigma_cache:
            sigma_cache[etype] = associated_std(prototypes[etype], prototypes)
        additions[k] = sample_intensive_vector(sigma_cache[etype], rng)
    add = torch.zeros_like(features)
    add[torch.tensor(rows, dtype=torch.long)] = torch.tensor(
        additions, dtype=features.dtype
    )
    return features + add


def collect_type_features(
    model: DetectionModel, sentences: Sequence[TokenizedSentence], batch_size: int = 64
) -> tuple[list[np.ndarray], dict[str, list[tuple[int, EventMention]]]]:
    """Eval-mode feature matrices per sentence plus gold mention sites per type.

    Pseudo-labeled mentions are excluded: prototypes are built from annotated
    tokens only.
    """
    was_training = model.training
    model.eval()
    feats: list[np.ndarray] = []
    with torch.no_grad():
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start : start + batch_size]
            batch = make_batch(chunk, model.encoder.vocab)
            features, _ = model.forward_batch(batch.ids, batch.mask)
            for row, sentence in enumerate(chunk):
                feats.append(features[row, : len(sentence)].cpu().numpy())
    if was_training:
        model.train()
    sites: dict[str, list[tuple[int, EventMention]]] = {}
    for pos, sentence in enumerate(sentences):
        for ev in sentence.events:
            if ev.pseudo:
                continue
            sites.setdefault(ev.event_type, []).append((pos, ev))
    return feats, sites


def build_prototype_store(
    model: DetectionModel,
    train_view: Sequence[TokenizedSentence],
    new_types: Sequence[str],
    memory: MemoryStore | None,
    batch_size: int = 64,
) -> dict[str, Prototype]:
    """Prototypes for every seen type: new types from the current train view,
    previously seen types from their memory exemplars."""
    store: dict[str, Prototype] = {}
    feats, sites = collect_type_features(model, train_view, batch_size)
    for etype in new_types:
        vectors = [
            feats[pos][j]
            for pos, ev in sites.get(etype, [])
            for j in ev.trigger_tokens()
        ]
        if not vectors:
            raise DetectionError(f"no training tokens to build a prototype for {etype!r}")
        store[etype] = compute_prototype(etype, np.stack(vectors))
    if memory is not None:
        mem_keys = [
            (etype, ex)
            for etype in memory.types
            if etype not in store
            for ex in memory.exemplars(etype)
        ]
        snapshots = [ex.sentence for _, ex in mem_keys]
        if snapshots:
            mem_feats, _ = collect_type_features(model, snapshots, batch_size)
            grouped: dict[str, list[np.ndarray]] = {}
            for (etype, ex), feat in zip(mem_keys, mem_feats):
                for j in range(ex.trigger_start, ex.trigger_end + 1):
                    grouped.setdefault(etype, []).append(feat[j])
            for etype, vectors in grouped.items():
                store[etype] = compute_prototype(etype, np.stack(vectors))
    return store


def prototype_store_to_json(store: Mapping[str, Prototype]) -> dict:
    return {
        etype: {
            "mu": [float(x) for x in proto.mu],
            "sigma": [float(x) for x in proto.sigma],
            "count": proto.count,
        }
        for etype, proto in sorted(store.items())
    }


# ---------------------------------------------------------------------------
# Prediction.
# ---------------------------------------------------------------------------


def mentions_from_token_types(types: Sequence[str]) -> list[tuple[tuple[int, int], str]]:
    """Group maximal runs of the same non-NA token type into trigger mentions."""
    mentions: list[tuple[tuple[int, int], str]] = []
    start: int | None = None
    current = NA_LABEL
    for j, t in enumerate(list(types) + [NA_LABEL]):
        if t == current and start is not None:
            continue
        if start is not None and current != NA_LABEL:
            mentions.append(((start, j - 1), current))
        start, current = (j, t) if t != NA_LABEL else (None, NA_LABEL)
    return mentions


def predict_mentions(
    model: DetectionModel,
    sentences: Sequence[TokenizedSentence],
    batch_size: int = 64,
) -> dict[str, list[tuple[tuple[int, int], str]]]:
    """Eval-mode trigger predictions per sentence id."""
    probs = model.token_probabilities(sentences, batch_size=batch_size)
    out: dict[str, list[tuple[tuple[int, int], str]]] = {}
    for sentence, p in zip(sentences, probs):
        token_types = [model.label_space[int(i)] for i in p.argmax(axis=1)]
        out[sentence.sentence_id] = mentions_from_token_types(token_types)
    return out


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------


@dataclass
class CurvePoint:
    stage: int
    phase: str
    epoch: int
    loss_cls: float
    loss_afd: float
    loss_spd: float
    loss_total: float
    dev_f1: float | None


@dataclass
class DetectionTaskLogs:
    stage: int
    train_audit: list[PseudoLabelRecord] = field(default_factory=list)
    memory_audit: list[PseudoLabelRecord] = field(default_factory=list)
    curve: list[CurvePoint] = field(default_factory=list)
    prototypes: dict[str, Prototype] = field(default_factory=dict)
    best_epoch: int = -1
    best_dev_f1: float = 0.0


def _chunks(order: list[int], size: int) -> Iterable[list[int]]:
    for start in range(0, len(order), size):
        yield order[start : start + size]


def _copy_state(model: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _dev_f1(model: DetectionModel, dev: Sequence[TokenizedSentence], seen: Sequence[str]) -> float:
    if not dev:
        return 0.0
    gold = evaluation.gold_trigger_mentions(dev, types=set(seen))
    preds = predict_mentions(model, dev)
    return evaluation.detection_f1(preds, gold).f1


def classification_epoch(
    model: DetectionModel,
    data: Sequence[TokenizedSentence],
    optimizer: torch.optim.Optimizer,
    batch_rng: random.Random,
    batch_size: int,
) -> float:
    """One shuffled epoch of pure cross-entropy training; returns mean loss."""
    model.train()
    label_index = model.label_index
    order = list(range(len(data)))
    batch_rng.shuffle(order)
    total, n_batches = 0.0, 0
    for chunk in _chunks(order, batch_size):
        batch = make_batch([data[i] for i in chunk], model.encoder.vocab, label_index)
        features, _ = model.forward_batch(batch.ids, batch.mask)
        probs = torch.softmax(model.classifier(features), dim=-1)
        loss = classification_loss(probs[batch.mask], batch.labels[batch.mask])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        total += float(loss.detach())
        n_batches += 1
    return total / max(n_batches, 1)


def select_stage_exemplars(
    model: DetectionModel,
    train_view: Sequence[TokenizedSentence],
    new_types: Sequence[str],
    m: int,
    seed: int,
    batch_size: int = 64,
) -> dict[str, list[Exemplar]]:
    """k-means exemplar selection over trigger-span mean features, per new type.

    Snapshots store the raw (un-augmented) visible annotations; memory
    relabeling afterwards adds pseudo labels with the newest model.
    """
    feats, sites = collect_type_features(model, train_view, batch_size)
    selections: dict[str, list[Exemplar]] = {}
    for etype in new_types:
        instances = sites.get(etype, [])
        if not instances:
            continue
        vectors = np.stack(
            [
                feats[pos][ev.trigger_start : ev.trigger_end + 1].mean(axis=0)
                for pos, ev in instances
            ]
        )
        chosen = select_exemplars(instances, vectors, m, derive_seed(seed, 0, etype))
        selections[etype] = [
            Exemplar(
                sentence_id=train_view[pos].sentence_id,
                trigger_start=ev.trigger_start,
                trigger_end=ev.trigger_end,
                event_type=etype,
                sentence=train_view[pos],
            )
            for pos, ev in chosen
        ]
    return selections


def train_task(
    model: DetectionModel,
    teacher: DetectionModel | None,
    stream: TaskStream,
    stage: int,
    memory: MemoryStore | None,
    cfg: DetectionTrainConfig,
) -> DetectionTaskLogs:
    """Run the full per-stage procedure on task `stage` (1-based).

    Order: (1) pseudo-label augmentation via the teacher, (2) classifier
    widening + warm-up pass, (3) prototype computation, (4) main training on
    augmented data plus memory with the combined loss and long-tail
    enhancement, (5) exemplar selection, (6) memory relabeling.
    """
    view = stream.tasks[stage - 1]
    new_types = list(view.task_types)
    logs = DetectionTaskLogs(stage=stage)

    torch.manual_seed(derive_seed(cfg.seed, stage, "torch"))
    batch_rng = random.Random(derive_seed(cfg.seed, stage, "shuffle"))
    enhance_rng = np.random.default_rng(derive_seed(cfg.seed, stage, "enhance"))

    train_data: list[TokenizedSentence] = list(view.train)
    if teacher is not None and cfg.enable_da:
        train_data, logs.train_audit = augment_with_pseudo_labels(
            train_data, teacher, cfg.pseudo.tau
        )

    n_prev = len(model.label_space) - 1
    model.widen(new_types, seed=derive_seed(cfg.seed, stage, "widen"))
    n_seen = len(model.label_space) - 1
    label_index = model.label_index
    new_idx = torch.tensor([label_index[t] for t in new_types], dtype=torch.long)

    optimizer = torch.optim.Adam(
        [
            {
                "params": list(model.encoder.parameters()) + list(model.projector.parameters()),
                "lr": cfg.lr_encoder,
            },
            {"params": model.classifier.parameters(), "lr": cfg.lr_classifier},
        ]
    )

    # Prototype transfer needs a warmed-up model and memory coverage of every
    # previously seen type; at stage 1 no continual machinery is active.
    prev_types = stream.seen_types(stage - 1) if stage >= 2 else ()
    pkt_active = cfg.enable_pkt and stage >= 2
    if pkt_active and (memory is None or any(t not in memory for t in prev_types)):
        logger.warning("prototype transfer disabled: memory does not cover all previous types")
        pkt_active = False

    prototypes: dict[str, Prototype] = {}
    long_tail: set[str] = set()
    if pkt_active:
        for epoch in range(cfg.warmup_epochs):
            loss = classification_epoch(model, view.train, optimizer, batch_rng, cfg.batch_size)
            logs.curve.append(CurvePoint(stage, "warmup", epoch, loss, 0.0, 0.0, loss, None))
        prototypes = build_prototype_store(model, view.train, new_types, memory)
        counts = {t: stream.train_type_counts.get(t, 0) for t in stream.seen_types(stage)}
        long_tail = set(long_tail_types(counts, cfg.long_tail_fraction))
        logs.prototypes = prototypes

    memory_sentences = memory.training_sentences() if memory is not None else []
    data = train_data + memory_sentences
    # Checkpoint selection uses only the current task's dev view: older dev
    # sets are treated as unavailable, like the rest of the old training data.
    dev = list(view.dev)
    dev_gold = (
        evaluation.gold_trigger_mentions(dev, types=set(view.task_types)) if dev else {}
    )

    use_afd = teacher is not None and cfg.enable_afd and n_prev > 0
    use_spd = teacher is not None and cfg.enable_spd and n_prev > 0
    L_eff = min(cfg.distill.L, model.encoder.n_layers)

    best_state: dict[str, torch.Tensor] | None = None
    for epoch in range(cfg.epochs):
        model.train()
        order = list(range(len(data)))
        batch_rng.shuffle(order)
        sums = {"cls": 0.0, "afd": 0.0, "spd": 0.0, "total": 0.0}
        n_batches = 0
        for chunk in _chunks(order, cfg.batch_size):
            batch = make_batch([data[i] for i in chunk], model.encoder.vocab, label_index)
            features, attention = model.forward_batch(batch.ids, batch.mask)
            flat_features = features[batch.mask]
            flat_labels = batch.labels[batch.mask]

            cls_features = flat_features
            if pkt_active and long_tail:
                types_per_token = [
                    model.label_space[int(i)] if int(i) > 0 else None
                    for i in flat_labels.tolist()
                ]
                cls_features = enhance_long_tail(
                    flat_features, types_per_token, long_tail, prototypes, enhance_rng
                )
            probs = torch.softmax(model.classifier(cls_features), dim=-1)
            l_cls = classification_loss(probs, flat_labels)

            l_afd = probs.new_zeros(())
            l_spd = probs.new_zeros(())
            if use_afd or use_spd:
                with torch.no_grad():
                    t_features, t_attention = teacher.forward_batch(batch.ids, batch.mask)
                    t_probs = torch.softmax(teacher.classifier(t_features), dim=-1)[batch.mask]
                if use_afd:
                    student_att = batch_attentive_features(features, attention, batch.mask, L_eff)
                    teacher_att = batch_attentive_features(t_features, t_attention, batch.mask, L_eff)
                    l_afd = afd_loss(student_att[batch.mask], teacher_att[batch.mask])
                if use_spd:
                    keep = ~torch.isin(flat_labels, new_idx)
                    l_spd = spd_loss(probs, t_probs, keep, n_prev)

            loss = combined_loss(l_cls, l_afd, l_spd, n_prev, n_seen, cfg.distill)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            sums["cls"] += float(l_cls.detach())
            sums["afd"] += float(l_afd.detach())
            sums["spd"] += float(l_spd.detach())
            sums["total"] += float(loss.detach())
            n_batches += 1

        denom = max(n_batches, 1)
        dev_f1 = None
        if dev:
            task_types = set(view.task_types)
            preds = {
                sid: [m for m in mentions if m[1] in task_types]
                for sid, mentions in predict_mentions(model, dev).items()
            }
            dev_f1 = evaluation.detection_f1(preds, dev_gold).f1
            if best_state is None or dev_f1 >= logs.best_dev_f1:
                logs.best_dev_f1 = dev_f1
                logs.best_epoch = epoch
                best_state = _copy_state(model)
        logs.curve.append(
            CurvePoint(
                stage,
                "main",
                epoch,
                sums["cls"] / denom,
                sums["afd"] / denom,
                sums["spd"] / denom,
                sums["total"] / denom,
                dev_f1,
            )
        )
    if best_state is not None:
        model.load_state_dict(best_state)

    if memory is not None and cfg.memory_size > 0:
        selections = select_stage_exemplars(
            model, view.train, new_types, cfg.memory_size, derive_seed(cfg.seed, stage, "kmeans")
        )
        memory.update(selections)
        if cfg.enable_da:
            logs.memory_audit = relabel_memory(memory, model, cfg.pseudo.tau)
    return logs
