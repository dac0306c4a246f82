"""Contextual token encoders and the shared feature machinery.

The encoder contract: given a tokenized sentence, produce per-token hidden
states [n, d] and the full self-attention stack [n_layers, n_heads, n, n].
The built-in implementation is a small trainable transformer; pretrained
encoders can be plugged in by registering a factory under the
"external-pretrained" kind (any nn.Module exposing the same attributes and
`forward(ids, mask)` / `encode(sentence)` works).

On top of any encoder sit three pure operations:
  * project_features  - f = LayerNorm(W . Dropout(h) + b)
  * context_attention - attention averaged over the last L layers and all heads
  * attentive_features- A_j = (1/n) * sum_k attn[j, k] * f_k
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable

import torch
from torch import nn

from .corpus import TokenizedSentence

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

TOY_KIND = "toy-transformer"
EXTERNAL_KIND = "external-pretrained"


class EncoderError(ValueError):
    """Invalid encoder configuration or input."""


@dataclass
class EncoderConfig:
    kind: str = TOY_KIND
    n_layers: int = 2
    n_heads: int = 2
    d: int = 32
    L: int = 2
    dropout_rate: float = 0.2
    seed: int = 0
    max_len: int = 64

    def __post_init__(self) -> None:
        if self.kind not in (TOY_KIND, EXTERNAL_KIND):
            raise EncoderError(f"unknown encoder kind {self.kind!r}")
        if not 1 <= self.L <= self.n_layers:
            raise EncoderError(f"need 1 <= L <= n_layers, got L={self.L}, n_layers={self.n_layers}")
        if self.d % self.n_heads != 0:
            raise EncoderError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if not 0 <= self.dropout_rate < 1:
            raise EncoderError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


@dataclass
class EncoderOutput:
    """Hidden states [n, d] and attention stack [n_layers, n_heads, n, n]."""

    hidden: torch.Tensor
    attention: torch.Tensor


class Vocabulary:
    """Token-to-id mapping with fixed <pad>=0 and <unk>=1."""

    def __init__(self, tokens: Iterable[str] = ()) -> None:
        self._index: dict[str, int] = {PAD_TOKEN: 0, UNK_TOKEN: 1}
        self._tokens: list[str] = [PAD_TOKEN, UNK_TOKEN]
        for token in tokens:
            self.add(token)

    @classmethod
    def from_sentences(cls, sentences: Iterable[TokenizedSentence]) -> "Vocabulary":
        vocab = cls()
        for sentence in sentences:
            for token in sentence.tokens:
                vocab.add(token)
        return vocab

    @classmethod
    def from_token_list(cls, tokens: list[str]) -> "Vocabulary":
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise EncoderError("token list must start with <pad>, <unk>")
        return cls(tokens[2:])

    def add(self, token: str) -> int:
        if token not in self._index:
            self._index[token] = len(self._tokens)
            self._tokens.append(token)
        return self._index[token]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        unk = self._index[UNK_TOKEN]
        return [self._index.get(t, unk) for t in tokens]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)


class _SelfAttentionLayer(nn.Module):
    """Post-norm transformer layer that returns row-stochastic attention."""

    def __init__(self, d: int, n_heads: int, dropout: float) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.ffn = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d))
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(
        self, x: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        bsz, n, d = x.shape

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(bsz, n, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = (attn @ v).transpose(1, 2).reshape(bsz, n, d)
        x = self.norm1(x + self.drop(self.out(ctx)))
        x = self.norm2(x + self.drop(self.ffn(x)))
        return x, attn


class ToyTokenEncoder(nn.Module):
    """Small from-scratch transformer over a corpus-fitted vocabulary."""

    def __init__(self, vocab: Vocabulary, config: EncoderConfig) -> None:
        super().__init__()
        if config.kind != TOY_KIND:
            raise EncoderError(f"ToyTokenEncoder requires kind={TOY_KIND!r}")
        self.vocab = vocab
        self.config = config
        self.d = config.d
        self.n_layers = config.n_layers
        self.n_heads = config.n_heads
        self.max_len = config.max_len
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.embedding = nn.Embedding(len(vocab), config.d, padding_idx=0)
            self.position = nn.Embedding(config.max_len, config.d)
            self.layers = nn.ModuleList(
                _SelfAttentionLayer(config.d, config.n_heads, config.dropout_rate)
                for _ in range(config.n_layers)
            )
            self.drop = nn.Dropout(config.dropout_rate)

    def forward(
        self, ids: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """ids, mask: [batch, n] -> hidden [batch, n, d], attention [batch, layers, heads, n, n]."""
        n = ids.shape[1]
        if n > self.max_len:
            raise EncoderError(f"sequence length {n} exceeds max length {self.max_len}")
        pos = torch.arange(n, device=ids.device)
        x = self.drop(self.embedding(ids) + self.position(pos)[None])
        stacks = []
        for layer in self.layers:
            x, attn = layer(x, mask)
            stacks.append(attn)
        return x, torch.stack(stacks, dim=1)

    def encode(self, sentence: TokenizedSentence) -> EncoderOutput:
        if len(sentence) == 0:
            raise EncoderError("cannot encode an empty sentence")
        ids = torch.tensor([self.vocab.encode(sentence.tokens)], dtype=torch.long)
        mask = torch.ones_like(ids, dtype=torch.bool)
        hidden, attention = self.forward(ids, mask)
        return EncoderOutput(hidden=hidden[0], attention=attention[0])


class FeatureProjector(nn.Module):
    """f = LayerNorm(W . Dropout(h) + b), mapping encoder dim d to feature dim h."""

    def __init__(self, d: int, h: int, dropout_rate: float = 0.2) -> None:
        super().__init__()
        self.d = d
        self.h = h
        self.linear = nn.Linear(d, h)
        self.drop = nn.Dropout(dropout_rate)
        self.norm = nn.LayerNorm(h)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.norm(self.linear(self.drop(hidden)))


def project_features(output: EncoderOutput, projector: FeatureProjector) -> torch.Tensor:
    """Per-token feature matrix [n, h]; dropout is live only in training mode."""
    return projector(output.hidden)


def context_attention(output: EncoderOutput, L: int) -> torch.Tensor:
    """Mean attention over the last L layers and all heads; rows sum to 1."""
    n_layers = output.attention.shape[0]
    if not 1 <= L <= n_layers:
        raise EncoderError(f"L={L} out of range 1..{n_layers}")
    return output.attention[-L:].mean(dim=(0, 1))


def attentive_features(features: torch.Tensor, attn: torch.Tensor) -> torch.Tensor:
    """A_j = (1/n) * sum_k attn[j, k] * f_k for a single sentence.

    The 1/n prefactor is applied on top of the row-stochastic attention, so
    attentive features are deliberately scaled down by sentence length.
    """
    n = features.shape[0]
    if attn.shape != (n, n):
        raise EncoderError(f"attention shape {tuple(attn.shape)} does not match {n} tokens")
    return (attn @ features) / n


# ---------------------------------------------------------------------------
# Construction and checkpointing.
# ---------------------------------------------------------------------------

ENCODER_FACTORIES: dict[str, Callable[..., nn.Module]] = {}


def register_encoder(kind: str, factory: Callable[..., nn.Module]) -> None:
    ENCODER_FACTORIES[kind] = factory


def build_encoder(config: EncoderConfig, vocab: Vocabulary | None = None) -> nn.Module:
    if config.kind == TOY_KIND:
        if vocab is None:
            raise EncoderError("toy encoder needs a fitted vocabulary")
        return ToyTokenEncoder(vocab, config)
    factory = ENCODER_FACTORIES.get(config.kind)
    if factory is None:
        raise EncoderError(
            f"no factory registered for encoder kind {config.kind!r}; "
            "register one with register_encoder()"
        )
    return factory(config, vocab)


def save_encoder(encoder: ToyTokenEncoder, path: str | Path) -> None:
    """Single-file self-describing checkpoint: config + vocab + parameters."""
    payload = {
        "config": asdict(encoder.config),
        "vocab": encoder.vocab.tokens,
        "state": encoder.state_dict(),
    }
    torch.save(payload, Path(path))


def load_encoder(path: str | Path) -> ToyTokenEncoder:
    payload = torch.load(Path(path), weights_only=True)
    config = EncoderConfig(**payload["config"])
    vocab = Vocabulary.from_token_list(list(payload["vocab"]))
    encoder = ToyTokenEncoder(vocab, config)
    encoder.load_state_dict(payload["state"])
    return encoder
