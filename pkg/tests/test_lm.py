import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dipmark.core import InvalidParams, Vocabulary, validate_distribution
from dipmark.lm import (
    CountingProvider,
    EmptyCorpus,
    NGramModel,
    ProviderError,
    TableModel,
    TopKProvider,
    corpus_prompts,
    default_provider,
    load_model,
    model_from_json,
    next_distribution,
    ngram_train,
    save_model,
    tokenize_corpus,
    top_k_truncate,
)


def test_bigram_point_mass():
    # a b a b: 'a' is always followed by 'b'
    model = ngram_train([[0, 1, 0, 1]], order=2, lam=0.0)
    assert next_distribution(model, [0]).probs.tolist() == [0.0, 1.0]
    assert next_distribution(model, [1]).probs.tolist() == [1.0, 0.0]


def test_smoothing_formula():
    model = ngram_train([[0, 1, 0, 2, 0, 1]], order=2, lam=0.5)
    # after 0: counts {1: 2, 2: 1}; N = 3
    want = np.array([0.5, 2.5, 1.5]) / (3 + 1.5)
    assert np.allclose(next_distribution(model, [2, 0]).probs, want)
    # unseen context is uniform
    assert np.allclose(next_distribution(model, []).probs, [1 / 3] * 3)


def test_unseen_without_smoothing_fails():
    model = ngram_train([[0, 1]], order=2, lam=0.0)
    with pytest.raises(ProviderError):
        next_distribution(model, [1])


def test_train_errors():
    with pytest.raises(EmptyCorpus):
        ngram_train([[]], order=2, lam=0.1)
    with pytest.raises(InvalidParams):
        ngram_train([[0]], order=0, lam=0.1)
    with pytest.raises(InvalidParams):
        NGramModel(2, -1.0, Vocabulary(2), {})


def test_top_k_example():
    d = validate_distribution([0.5, 0.3, 0.1, 0.06, 0.04])
    got = top_k_truncate(d, 3).probs
    assert np.allclose(got, [0.5 / 0.9, 0.3 / 0.9, 0.1 / 0.9, 0, 0])
    tie = top_k_truncate(validate_distribution([0.25] * 4), 2).probs
    assert tie.tolist() == [0.5, 0.5, 0.0, 0.0]
    with pytest.raises(InvalidParams):
        top_k_truncate(d, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1), st.data())
def test_top_k_properties(n, seed, data):
    k = data.draw(st.integers(1, n))
    p = validate_distribution(np.random.default_rng(seed).dirichlet(np.ones(n)))
    q = top_k_truncate(p, k).probs
    assert np.count_nonzero(q) <= k
    assert abs(q.sum() - 1) < 1e-12
    kept = q > 0
    if kept.any() and (~kept).any():
        assert p.probs[kept].min() >= p.probs[~kept].max()


def test_table_model_and_wrappers():
    t = TableModel([[0.2, 0.8]])
    assert next_distribution(t, [1, 0, 1]).probs.tolist() == [0.2, 0.8]
    t2 = TableModel([[1.0, 0.0], [0.0, 1.0]], offset=1)
    assert next_distribution(t2, [0]).probs.tolist() == [1.0, 0.0]
    assert next_distribution(t2, [0, 0]).probs.tolist() == [0.0, 1.0]
    counting = CountingProvider(t2)
    top = TopKProvider(counting, 1)
    top.next_distribution([0])
    assert counting.calls == 1
    with pytest.raises(InvalidParams):
        TableModel([[0.5, 0.5], [1.0]])


def test_next_distribution_wraps_errors():
    class Broken:
        vocab_size = 2

        def next_distribution(self, context):
            raise RuntimeError("boom")

    with pytest.raises(ProviderError):
        next_distribution(Broken(), [])


def test_tokenize_and_persistence(tmp_path):
    seqs, vocab = tokenize_corpus(["the cat sat\n\nthe dog"])
    assert seqs == [[0, 1, 2], [0, 3]]
    assert vocab.labels == ("the", "cat", "sat", "dog")
    model = ngram_train(seqs, 2, 0.1, vocab)
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    for ctx in ([0], [1], [3], []):
        assert back.next_distribution(ctx) == model.next_distribution(ctx)
    table = TableModel([[0.2, 0.8]])
    assert model_from_json(json.loads(json.dumps(table.to_json()))).steps == table.steps
    with pytest.raises(InvalidParams):
        model_from_json({"type": "bogus"})
    with pytest.raises(InvalidParams):
        model_from_json({"type": "ngram"})


def test_default_provider_is_high_entropy():
    model = default_provider()
    assert model.vocab_size > 1000
    prompts = corpus_prompts()
    assert all(len(p) == 2 for p in prompts[:10])
    p = model.next_distribution(list(prompts[0])).probs
    entropy = -(p[p > 0] * np.log2(p[p > 0])).sum()
    assert entropy > 8.0
