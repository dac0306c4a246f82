"""Shared fixtures and helpers, plus a terminal summary line per acceptance criterion."""

from __future__ import annotations

import re

import pytest
import torch

from cevex.corpus import (
    ArgumentMention,
    EntitySpan,
    EventMention,
    EventSchema,
    TokenizedSentence,
)
from cevex.encoder import EncoderConfig, ToyTokenEncoder, Vocabulary


def make_sentence(sid, tokens, events=(), entities=()):
    return TokenizedSentence(
        sentence_id=sid,
        tokens=tuple(tokens),
        events=tuple(events),
        entities=tuple(entities),
    )


def tiny_schema():
    return EventSchema(
        event_types=("Attack", "Marry", "Transport"),
        roles_of={
            "Attack": ("Attacker", "Place"),
            "Marry": ("Person",),
            "Transport": ("Origin", "Destination"),
        },
    )


def tiny_sentences():
    return [
        make_sentence(
            "s0",
            ["the", "bombing", "hit", "the", "city"],
            events=[
                EventMention(1, 1, "Attack", arguments=(ArgumentMention(4, 4, "Place"),))
            ],
            entities=[EntitySpan(4, 4)],
        ),
        make_sentence(
            "s1",
            ["melony", "was", "married", "before", "she", "left"],
            events=[
                EventMention(2, 2, "Marry", arguments=(ArgumentMention(0, 0, "Person"),)),
                EventMention(5, 5, "Transport"),
            ],
            entities=[EntitySpan(0, 0)],
        ),
        make_sentence("s2", ["nothing", "happened", "here"]),
    ]


def toy_encoder(sentences, *, d=32, n_layers=2, n_heads=2, seed=0, dropout=0.0, max_len=64):
    vocab = Vocabulary.from_sentences(sentences)
    config = EncoderConfig(
        n_layers=n_layers, n_heads=n_heads, d=d, L=n_layers,
        dropout_rate=dropout, seed=seed, max_len=max_len,
    )
    return ToyTokenEncoder(vocab, config)


def finite_difference(loss_fn, tensors, eps=1e-6):
    """Central-difference gradients of loss_fn() w.r.t. each tensor's data."""
    grads = []
    with torch.no_grad():
        for tensor in tensors:
            grad = torch.zeros_like(tensor)
            flat = tensor.view(-1)
            gflat = grad.view(-1)
            for i in range(flat.shape[0]):
                original = flat[i].item()
                flat[i] = original + eps
                up = float(loss_fn())
                flat[i] = original - eps
                down = float(loss_fn())
                flat[i] = original
                gflat[i] = (up - down) / (2 * eps)
            grads.append(grad)
    return grads


def sampled_finite_difference(loss_fn, tensor, coords, eps=1e-6):
    """Central differences at selected flat coordinates of one tensor."""
    out = []
    flat = tensor.view(-1)
    with torch.no_grad():
        for i in coords:
            original = flat[i].item()
            flat[i] = original + eps
            up = float(loss_fn())
            flat[i] = original - eps
            down = float(loss_fn())
            flat[i] = original
            out.append((up - down) / (2 * eps))
    return torch.tensor(out, dtype=torch.float64)


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


_CRITERION = re.compile(r"test_criterion_(\d+)[a-z]?_?(.*)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion, aggregated over its tests."""
    outcomes: dict[int, dict] = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            name = getattr(report, "location", (None, None, ""))[2]
            match = _CRITERION.match(name.split("[")[0])
            if not match:
                continue
            num = int(match.group(1))
            entry = outcomes.setdefault(num, {"pass": 0, "fail": 0})
            entry["pass" if status == "passed" else "fail"] += 1
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(outcomes):
        entry = outcomes[num]
        verdict = "PASS" if entry["fail"] == 0 else "FAIL"
        terminalreporter.write_line(
            f"criterion {num}: {verdict} ({entry['pass']} passed, {entry['fail']} failed)"
        )
