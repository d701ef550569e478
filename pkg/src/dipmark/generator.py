"""Watermarked sampling loop.

At every step the texture key (the last ``window`` tokens of prompt plus
output) is looked up in a per-run history. A fresh key derives the cipher
and the token is drawn from the reweighted distribution; a repeated key
falls back to the provider's own distribution so that ciphers stay
independent across watermarked steps.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import cipher as _cipher
from . import reweight as _reweight
from .core import Distribution, InvalidParams, Permutation, SecretKey, WatermarkParams
from .lm import DistributionProvider, next_distribution


@dataclass(frozen=True)
class GenerationConfig:
    key: SecretKey
    length: int
    strategy: _reweight.ReweightStrategy = field(default_factory=_reweight.ReweightStrategy.dip)
    params: WatermarkParams = field(default_factory=WatermarkParams)
    prompt: tuple[int, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise InvalidParams(f"length must be >= 1, got {self.length}")
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))


@dataclass(frozen=True)
class StepRecord:
    texture_key: Optional[tuple[int, ...]]
    repeated: bool
    cipher_digest: Optional[str]
    original_dist_hash: str
    watermarked_dist_hash: str

    def to_json(self) -> dict:
        return {
            "texture_key": list(self.texture_key) if self.texture_key is not None else None,
            "repeated": self.repeated,
            "cipher_digest": self.cipher_digest,
            "original_dist_hash": self.original_dist_hash,
            "watermarked_dist_hash": self.watermarked_dist_hash,
        }


@dataclass
class GenerationTrace:
    tokens: list[int]
    step_records: list[StepRecord]

    def to_json(self) -> dict:
        return {"tokens": self.tokens, "trace": [r.to_json() for r in self.step_records]}


def _dist_hash(dist: Distribution) -> str:
    return hashlib.sha256(dist.probs.tobytes()).hexdigest()[:16]


def watermarked_step(
    original: Distribution,
    context: Sequence[int],
    key: SecretKey,
    strategy: _reweight.ReweightStrategy,
    window: int,
    history: _cipher.HistoryLog,
    cache: Optional[_cipher.CipherCache] = None,
) -> tuple[Distribution, StepRecord]:
    """Distribution to sample the next token from, plus its audit record.

    ``context`` is everything before the token (prompt included). Mutates
    ``history`` when the texture key is fresh.
    """
    orig_hash = _dist_hash(original)
    if not context:
        return original, StepRecord(None, True, None, orig_hash, orig_hash)
    tk = _cipher.extract_texture_key(context, len(context), window)
    if history.check_and_insert(tk):
        return original, StepRecord(tk.tokens, True, None, orig_hash, orig_hash)
    seed = _cipher.derive_seed(key, tk)
    if cache is not None:
        theta = Permutation(cache.order(tk.tokens))
    else:
        theta = _cipher.permutation_from_seed(seed, original.size)
    marked = _reweight.apply(strategy, original, theta)
    return marked, StepRecord(tk.tokens, False, seed.hex(), orig_hash, _dist_hash(marked))


def sample_token(dist: Distribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; zero-mass tokens are never returned."""
    cdf = np.cumsum(dist.probs)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= dist.size:
        idx = int(np.flatnonzero(dist.probs > 0)[-1])
    return idx


def generate(
    provider: DistributionProvider,
    config: GenerationConfig,
    cache: Optional[_cipher.CipherCache] = None,
) -> GenerationTrace:
    """Sample ``config.length`` tokens; the history log starts empty on every call."""
    rng = np.random.default_rng(config.rng_seed)
    history = _cipher.HistoryLog()
    context = list(config.prompt)
    tokens: list[int] = []
    records: list[StepRecord] = []
    for _ in range(config.length):
        original = next_distribution(provider, context)
        dist, record = watermarked_step(
            original, context, config.key, config.strategy, config.params.window, history, cache
        )
        token = sample_token(dist, rng)
        tokens.append(token)
        records.append(record)
        context.append(token)
    return GenerationTrace(tokens, records)


def generate_unwatermarked(
    provider: DistributionProvider,
    length: int,
    prompt: Sequence[int] = (),
    rng_seed: int = 0,
) -> list[int]:
    if length < 1:
        raise InvalidParams(f"length must be >= 1, got {length}")
    rng = np.random.default_rng(rng_seed)
    context = list(prompt)
    out = []
    for _ in range(length):
        token = sample_token(next_distribution(provider, context), rng)
        out.append(token)
        context.append(token)
    return out
