import numpy as np
import pytest
import torch

from cevex.corpus import EventMention
from cevex.detection import (
    DetectionModel,
    apply_pseudo_labels,
    augment_with_pseudo_labels,
    relabel_memory,
)
from cevex.memory import Exemplar, MemoryStore
from conftest import make_sentence, toy_encoder


def test_confident_prediction_creates_pseudo_label():
    # "married" gets 0.85 confidence on the previously seen type at tau=0.8.
    sentence = make_sentence("s0", ["melony", "was", "married"])
    probs = np.array([
        [0.9, 0.1],
        [0.95, 0.05],
        [0.15, 0.85],
    ])
    labeled, records = apply_pseudo_labels(sentence, probs, ["NA", "Marry"], tau=0.8)
    assert len(labeled.events) == 1
    added = labeled.events[0]
    assert added.event_type == "Marry"
    assert (added.trigger_start, added.trigger_end) == (2, 2)
    assert added.pseudo
    assert records[0].confidence == pytest.approx(0.85)


def test_below_threshold_stays_na():
    sentence = make_sentence("s0", ["she", "married"])
    probs = np.array([[0.9, 0.1], [0.25, 0.75]])
    labeled, records = apply_pseudo_labels(sentence, probs, ["NA", "Marry"], tau=0.8)
    assert labeled.events == ()
    assert records == []


def test_threshold_boundary_is_inclusive():
    sentence = make_sentence("s0", ["married"])
    probs = np.array([[0.2, 0.8]])
    labeled, _ = apply_pseudo_labels(sentence, probs, ["NA", "Marry"], tau=0.8)
    assert len(labeled.events) == 1


def test_gold_labels_never_overwritten():
    sentence = make_sentence(
        "s0", ["bombing", "married"], events=[EventMention(0, 0, "Attack")]
    )
    # teacher very confident about an old type on the gold-labeled token
    probs = np.array([[0.01, 0.99], [0.15, 0.85]])
    labeled, records = apply_pseudo_labels(sentence, probs, ["NA", "Marry"], tau=0.8)
    assert labeled.events[0] == sentence.events[0]  # gold kept, not pseudo
    assert [r.token for r in records] == [1]
    gold = [ev for ev in labeled.events if not ev.pseudo]
    assert gold == [sentence.events[0]]


def test_existing_pseudo_labels_not_overwritten():
    sentence = make_sentence(
        "s0", ["married"], events=[EventMention(0, 0, "Marry", pseudo=True)]
    )
    probs = np.array([[0.05, 0.95]])
    labeled, records = apply_pseudo_labels(sentence, probs, ["NA", "Marry"], tau=0.8)
    assert labeled == sentence
    assert records == []


def _tiny_model(sentences, n_types=2):
    model = DetectionModel(toy_encoder(sentences, d=16), feature_dim=16, seed=0)
    model.widen([f"T{i}" for i in range(n_types)], seed=1)
    model.eval()
    return model


def test_augment_tau_one_never_fires_with_nondegenerate_softmax():
    sentences = [make_sentence("s0", ["a", "b", "c"])]
    model = _tiny_model(sentences)
    augmented, records = augment_with_pseudo_labels(sentences, model, tau=1.0)
    assert augmented == sentences
    assert records == []


def test_relabel_memory_adds_pseudo_labels_additively():
    sentence = make_sentence("s0", ["a", "b"], events=[EventMention(0, 0, "T0")])
    model = _tiny_model([sentence])
    with torch.no_grad():
        model.classifier.weight.zero_()
        model.classifier.bias.zero_()
        model.classifier.bias[2] = 50.0  # force extreme confidence on T1
    store = MemoryStore(4)
    store.update({"T0": [Exemplar("s0", 0, 0, "T0", sentence)]})
    records = relabel_memory(store, model, tau=0.8)
    snapshot = store.exemplars("T0")[0].sentence
    gold = [ev for ev in snapshot.events if not ev.pseudo]
    pseudo = [ev for ev in snapshot.events if ev.pseudo]
    assert gold == [sentence.events[0]]
    assert [ev.event_type for ev in pseudo] == ["T1"]  # only the NA token gained a label
    assert [r.source for r in records] == ["memory"]


def test_relabel_memory_tau_one_changes_nothing():
    sentence = make_sentence("s0", ["a", "b"], events=[EventMention(0, 0, "T0")])
    model = _tiny_model([sentence])
    store = MemoryStore(4)
    store.update({"T0": [Exemplar("s0", 0, 0, "T0", sentence)]})
    records = relabel_memory(store, model, tau=1.0)
    assert records == []
    assert store.exemplars("T0")[0].sentence == sentence


def test_probability_matrix_shape_mismatch_errors():
    from cevex.detection import DetectionError

    sentence = make_sentence("s0", ["a", "b"])
    with pytest.raises(DetectionError):
        apply_pseudo_labels(sentence, np.zeros((3, 2)), ["NA", "T"], tau=0.5)
