import itertools

import numpy as np
import pytest

from dipmark import cipher as c
from dipmark.core import InvalidParams, SecretKey, WatermarkParams, validate_distribution
from dipmark.detector import step_digests
from dipmark.generator import (
    GenerationConfig,
    generate,
    generate_unwatermarked,
    sample_token,
    watermarked_step,
)
from dipmark.lm import TableModel, default_provider
from dipmark.reweight import ReweightStrategy


def test_point_mass_is_fixed(key):
    steps = [[0, 0, 1, 0], [1, 0, 0, 0], [0, 0, 0, 1]]
    model = TableModel(steps)
    trace = generate(model, GenerationConfig(key, 9, prompt=(2,)))
    want = [int(np.argmax(steps[(1 + i) % 3])) for i in range(9)]
    assert trace.tokens == want
    assert generate_unwatermarked(model, 9, prompt=(2,)) == want


def test_repeated_keys_fall_back():
    model = TableModel([[0.0, 1.0]])
    trace = generate(model, GenerationConfig(SecretKey(bytes(16)), 5, prompt=(1,)))
    assert trace.tokens == [1] * 5
    flags = [r.repeated for r in trace.step_records]
    assert flags == [False, True, True, True, True]
    for r in trace.step_records[1:]:
        assert r.cipher_digest is None
        assert r.original_dist_hash == r.watermarked_dist_hash


def test_empty_prompt_first_step_unwatermarked(key):
    trace = generate(TableModel([[0.5, 0.5]]), GenerationConfig(key, 3))
    first = trace.step_records[0]
    assert first.repeated and first.texture_key is None and first.cipher_digest is None


def test_identity_strategy_matches_plain_sampling(key):
    model = default_provider()
    cfg = GenerationConfig(key, 40, ReweightStrategy.identity(), prompt=(0, 1), rng_seed=5)
    assert generate(model, cfg).tokens == generate_unwatermarked(model, 40, (0, 1), rng_seed=5)


def test_determinism_and_cache_agreement(key):
    model = default_provider()
    cfg = GenerationConfig(key, 60, prompt=(3, 4), rng_seed=11)
    a = generate(model, cfg)
    b = generate(model, cfg, c.CipherCache(key, model.vocab_size))
    assert a.tokens == b.tokens
    assert a.to_json() == b.to_json()


def test_history_resets_between_calls(key):
    model = TableModel([[0.0, 1.0]])
    cfg = GenerationConfig(key, 2, prompt=(1,))
    assert generate(model, cfg).step_records[0].repeated is False
    assert generate(model, cfg).step_records[0].repeated is False


@pytest.mark.parametrize("window", [1, 2, 3])
def test_digests_match_detector(key, window):
    model = default_provider()
    prompt = (5, 6, 7)
    params = WatermarkParams(window=window)
    trace = generate(model, GenerationConfig(key, 50, params=params, prompt=prompt, rng_seed=2))
    digests = step_digests(trace.tokens, key, window, prefix=prompt[-window:])
    for rec, dig in zip(trace.step_records, digests):
        if not rec.repeated:
            assert rec.cipher_digest == dig


def test_monte_carlo_single_token_frequency():
    rng = np.random.default_rng(0)
    dist = validate_distribution([0.99, 0.01])
    strategy = ReweightStrategy.dip(0.5)
    hits = 0
    trials = 100_000
    for _ in range(trials):
        key = SecretKey(rng.bytes(16))
        marked, _ = watermarked_step(dist, [0], key, strategy, 1, c.HistoryLog())
        hits += sample_token(marked, rng) == 0
    assert abs(hits / trials - 0.99) <= 0.003


def test_joint_distribution_preserved():
    # exact joint law of a length-2 sequence, averaged over random keys
    rng = np.random.default_rng(1)
    n = 3
    steps = [validate_distribution(rng.dirichlet(np.ones(n))) for _ in range(2)]
    strategy = ReweightStrategy.dip(0.45)
    prompt = [0]
    keys = 10_000
    acc = np.zeros((n, n))
    for _ in range(keys):
        key = SecretKey(rng.bytes(16))
        hist = c.HistoryLog()
        p1, _ = watermarked_step(steps[0], prompt, key, strategy, 1, hist)
        for x1 in range(n):
            h2 = c.HistoryLog(set(hist.seen))
            p2, _ = watermarked_step(steps[1], prompt + [x1], key, strategy, 1, h2)
            acc[x1] += p1.probs[x1] * p2.probs
    joint = acc / keys
    want = np.outer(steps[0].probs, steps[1].probs)
    assert 0.5 * np.abs(joint - want).sum() < 0.02


def test_unwatermarked_uniform_frequency():
    toks = generate_unwatermarked(TableModel([[0.5, 0.5]]), 10_000, rng_seed=3)
    assert abs(np.mean(np.array(toks) == 0) - 0.5) <= 0.015
    assert toks == generate_unwatermarked(TableModel([[0.5, 0.5]]), 10_000, rng_seed=3)


def test_sample_token_skips_zero_mass():
    d = validate_distribution([0.0, 1.0, 0.0])
    rng = np.random.default_rng(0)
    assert {sample_token(d, rng) for _ in range(200)} == {1}


def test_config_validation(key):
    with pytest.raises(InvalidParams):
        GenerationConfig(key, 0)
    with pytest.raises(InvalidParams):
        generate_unwatermarked(TableModel([[1.0]]), 0)
