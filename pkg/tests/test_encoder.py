import copy

import pytest
import torch

from cevex.corpus import TokenizedSentence
from cevex.encoder import (
    EncoderConfig,
    EncoderError,
    FeatureProjector,
    ToyTokenEncoder,
    Vocabulary,
    attentive_features,
    build_encoder,
    context_attention,
    load_encoder,
    project_features,
    register_encoder,
    save_encoder,
)
from conftest import finite_difference, make_sentence, tiny_sentences, toy_encoder


def five_token_sentence():
    return make_sentence("s", ["alpha", "beta", "gamma", "delta", "eps"])


def test_encode_shape_contract():
    sentence = five_token_sentence()
    encoder = toy_encoder([sentence], d=32, n_layers=2, n_heads=2)
    out = encoder.encode(sentence)
    assert tuple(out.hidden.shape) == (5, 32)
    assert tuple(out.attention.shape) == (2, 2, 5, 5)


def test_attention_rows_sum_to_one():
    sentence = five_token_sentence()
    encoder = toy_encoder([sentence])
    encoder.eval()
    out = encoder.encode(sentence)
    sums = out.attention.sum(dim=-1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)


def test_eval_mode_is_deterministic():
    sentence = five_token_sentence()
    encoder = toy_encoder([sentence], dropout=0.3)
    encoder.eval()
    a = encoder.encode(sentence)
    b = encoder.encode(sentence)
    assert torch.equal(a.hidden, b.hidden)
    assert torch.equal(a.attention, b.attention)


def test_sentence_longer_than_max_len_errors():
    sentence = make_sentence("s", ["w"] * 10)
    encoder = toy_encoder([sentence], max_len=8)
    with pytest.raises(EncoderError, match="exceeds max length"):
        encoder.encode(sentence)


def test_empty_sentence_errors():
    encoder = toy_encoder(tiny_sentences())
    with pytest.raises(Exception):
        encoder.encode(TokenizedSentence("e", ()))


def test_config_rejects_L_above_layers():
    with pytest.raises(EncoderError):
        EncoderConfig(n_layers=2, L=3)


def test_projector_identity_weights_is_layer_norm():
    sentence = five_token_sentence()
    encoder = toy_encoder([sentence], d=16)
    encoder.eval()
    out = encoder.encode(sentence)
    projector = FeatureProjector(16, 16, dropout_rate=0.0)
    with torch.no_grad():
        projector.linear.weight.copy_(torch.eye(16))
        projector.linear.bias.zero_()
    projector.eval()
    f = project_features(out, projector)
    expected = torch.nn.functional.layer_norm(out.hidden, (16,))
    assert torch.allclose(f, expected, atol=1e-6)


def test_projected_rows_are_normalized():
    sentence = five_token_sentence()
    encoder = toy_encoder([sentence], d=16)
    encoder.eval()
    projector = FeatureProjector(16, 24, dropout_rate=0.5)
    projector.eval()
    f = project_features(encoder.encode(sentence), projector)
    assert torch.allclose(f.mean(dim=1), torch.zeros(5), atol=1e-5)
    assert torch.allclose(f.var(dim=1, unbiased=False), torch.ones(5), atol=1e-3)


def test_projector_gradient_matches_finite_differences():
    torch.manual_seed(0)
    hidden = torch.randn(3, 4, dtype=torch.float64)
    projector = FeatureProjector(4, 4, dropout_rate=0.0).double()
    projector.eval()
    weights = torch.randn(3, 4, dtype=torch.float64)

    def loss_fn():
        return (projector(hidden) * weights).sum()

    loss = loss_fn()
    loss.backward()
    params = [projector.linear.weight, projector.linear.bias]
    fd = finite_difference(loss_fn, [p.data for p in params])
    for param, fd_grad in zip(params, fd):
        rel = (param.grad - fd_grad).norm() / max(fd_grad.norm(), 1e-12)
        assert rel < 1e-4


def test_context_attention_single_layer_single_head_passthrough():
    from cevex.encoder import EncoderOutput

    attn = torch.softmax(torch.randn(1, 1, 4, 4), dim=-1)
    out = EncoderOutput(hidden=torch.randn(4, 8), attention=attn)
    result = context_attention(out, 1)
    assert torch.allclose(result, attn[0, 0])


def test_context_attention_uniform_stays_uniform():
    from cevex.encoder import EncoderOutput

    n = 5
    attn = torch.full((3, 2, n, n), 1.0 / n)
    out = EncoderOutput(hidden=torch.randn(n, 8), attention=attn)
    result = context_attention(out, 2)
    assert torch.allclose(result, torch.full((n, n), 1.0 / n))


def test_context_attention_matches_direct_mean():
    from cevex.encoder import EncoderOutput

    torch.manual_seed(1)
    attn = torch.softmax(torch.randn(2, 2, 3, 3), dim=-1)
    out = EncoderOutput(hidden=torch.randn(3, 8), attention=attn)
    result = context_attention(out, 2)
    manual = torch.zeros(3, 3)
    for layer in range(2):
        for head in range(2):
            manual += attn[layer, head]
    manual /= 4
    assert torch.allclose(result, manual, atol=1e-6)
    rows = result.sum(dim=-1)
    assert torch.allclose(rows, torch.ones(3), atol=1e-5)


def test_context_attention_rejects_bad_L():
    from cevex.encoder import EncoderOutput

    out = EncoderOutput(hidden=torch.randn(3, 8), attention=torch.rand(2, 2, 3, 3))
    with pytest.raises(EncoderError):
        context_attention(out, 3)
    with pytest.raises(EncoderError):
        context_attention(out, 0)


def test_context_attention_invariant_to_head_permutation():
    from cevex.encoder import EncoderOutput

    torch.manual_seed(2)
    attn = torch.softmax(torch.randn(2, 3, 4, 4), dim=-1)
    permuted = attn[:, [2, 0, 1]]
    a = context_attention(EncoderOutput(torch.randn(4, 8), attn), 2)
    b = context_attention(EncoderOutput(torch.randn(4, 8), permuted), 2)
    assert torch.allclose(a, b, atol=1e-7)


def test_attentive_features_single_token_is_identity():
    f = torch.randn(1, 6)
    attn = torch.ones(1, 1)
    assert torch.allclose(attentive_features(f, attn), f)


def test_attentive_features_uniform_attention_collapses_rows():
    torch.manual_seed(3)
    n = 4
    f = torch.randn(n, 6)
    attn = torch.full((n, n), 1.0 / n)
    A = attentive_features(f, attn)
    expected = f.sum(dim=0, keepdim=True) / (n * n)
    assert torch.allclose(A, expected.expand(n, -1), atol=1e-6)


def test_attentive_features_matches_double_loop():
    torch.manual_seed(4)
    n, h = 3, 5
    f = torch.randn(n, h)
    attn = torch.softmax(torch.randn(n, n), dim=-1)
    A = attentive_features(f, attn)
    manual = torch.zeros(n, h)
    for j in range(n):
        for k in range(n):
            manual[j] += attn[j, k] * f[k]
    manual /= n
    assert torch.allclose(A, manual, atol=1e-6)


def test_attentive_features_shape_mismatch_errors():
    with pytest.raises(EncoderError):
        attentive_features(torch.randn(3, 5), torch.randn(4, 4))


def test_toy_encoder_trains_on_separable_task():
    # Two token classes, each tied to its own vocabulary half.
    sentences = [
        make_sentence(f"s{i}", [f"a{i % 5}", f"b{i % 5}"]) for i in range(5)
    ]
    encoder = toy_encoder(sentences, d=16, dropout=0.0)
    head = torch.nn.Linear(16, 2)
    opt = torch.optim.Adam(list(encoder.parameters()) + list(head.parameters()), lr=1e-2)
    ce = torch.nn.CrossEntropyLoss()
    ids = torch.tensor([encoder.vocab.encode(s.tokens) for s in sentences])
    mask = torch.ones_like(ids, dtype=torch.bool)
    labels = torch.tensor([[0, 1]] * len(sentences))
    loss = None
    for _ in range(200):
        hidden, _ = encoder.forward(ids, mask)
        loss = ce(head(hidden).view(-1, 2), labels.view(-1))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if float(loss.detach()) < 0.1:
            break
    assert float(loss.detach()) < 0.1


def test_checkpoint_round_trips_exactly(tmp_path):
    sentences = tiny_sentences()
    encoder = toy_encoder(sentences, d=16, seed=9)
    path = tmp_path / "encoder.pt"
    save_encoder(encoder, path)
    loaded = load_encoder(path)
    assert loaded.config == encoder.config
    assert loaded.vocab.tokens == encoder.vocab.tokens
    for key, value in encoder.state_dict().items():
        assert torch.equal(loaded.state_dict()[key], value)


def test_same_seed_same_initialization():
    sentences = tiny_sentences()
    a = toy_encoder(sentences, seed=5)
    b = toy_encoder(sentences, seed=5)
    for key, value in a.state_dict().items():
        assert torch.equal(b.state_dict()[key], value)


def test_build_encoder_external_requires_registration():
    config = EncoderConfig(kind="external-pretrained", n_layers=4, n_heads=4, d=64, L=3)
    with pytest.raises(EncoderError, match="register"):
        build_encoder(config)
    marker = object()
    register_encoder("external-pretrained", lambda cfg, vocab: marker)
    try:
        assert build_encoder(config) is marker
    finally:
        from cevex.encoder import ENCODER_FACTORIES

        ENCODER_FACTORIES.pop("external-pretrained", None)


def test_unknown_kind_rejected():
    with pytest.raises(EncoderError):
        EncoderConfig(kind="bert-large")
