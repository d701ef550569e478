"""Certified radii and random-edit attacks.

One edited token can cost at most ``window + 1`` green tokens: itself, plus
the ``window`` followers whose texture keys it feeds. The radii below turn
that worst case into an edit budget under which a detected sequence stays
detected at a fixed threshold ``z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from . import cipher as _cipher
from .core import InvalidParams, Vocabulary, red_list_size
from .detector import DetectorConfig, SequenceTooShort, green_ranks

ATTACK_MODES = ("substitute", "insert", "delete")

FIXED_LENGTH_CAVEAT = (
    "fixed-length radius (phi - z)/(a + 1) is taken as stated; its derivation "
    "carries an extra 1/sqrt(n) factor, so treat this radius as unverified"
)


@dataclass(frozen=True)
class CertifiedRadius:
    epsilon0: float
    basis: str
    inputs: dict = field(default_factory=dict)
    caveat: Optional[str] = None

    def edits(self, m: int) -> int:
        """Largest edit count certified for a sequence with ``m`` scored positions."""
        raw = self.epsilon0 * m
        k = math.floor(raw)
        # detection is strict (phi > z); at exact equality the worst case ties
        if k > 0 and k == raw:
            k -= 1
        return max(k, 0)


def certified_radius(phi: float, z: float, gamma: float, a: int) -> CertifiedRadius:
    """Radius allowing insertions, deletions and substitutions: ``(phi - z) / (2 + a - gamma + z)``."""
    if a < 1:
        raise InvalidParams(f"window must be >= 1, got {a}")
    if not 0.0 <= gamma < 1.0:
        raise InvalidParams(f"gamma must lie in [0, 1), got {gamma}")
    eps = max((phi - z) / (2.0 + a - gamma + z), 0.0)
    return CertifiedRadius(eps, "length-varying", {"phi": phi, "z": z, "gamma": gamma, "a": a})


def certified_radius_fixed_length(phi: float, z: float, a: int) -> CertifiedRadius:
    if a < 1:
        raise InvalidParams(f"window must be >= 1, got {a}")
    eps = max((phi - z) / (a + 1.0), 0.0)
    return CertifiedRadius(eps, "fixed-length", {"phi": phi, "z": z, "a": a}, FIXED_LENGTH_CAVEAT)


@dataclass(frozen=True)
class AttackSpec:
    mode: str
    epsilon: float
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in ATTACK_MODES:
            raise InvalidParams(f"attack mode must be one of {ATTACK_MODES}, got {self.mode!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidParams(f"epsilon must lie in [0, 1], got {self.epsilon}")


def attack(tokens: Sequence[int], spec: AttackSpec, vocab: Vocabulary) -> list[int]:
    """Apply ``round(epsilon * n)`` random edits at distinct positions (half-to-even rounding).

    Substitutions draw a uniformly random *different* token; insertions place a
    uniformly random token before the chosen position.
    """
    seq = [int(t) for t in tokens]
    n = len(seq)
    if n == 0:
        raise InvalidParams("cannot attack an empty sequence")
    k = round(spec.epsilon * n)
    if k == 0:
        return seq
    rng = np.random.default_rng(spec.rng_seed)
    positions = np.sort(rng.choice(n, size=k, replace=False))
    if spec.mode == "substitute":
        if vocab.size < 2:
            raise InvalidParams("substitution needs a vocabulary of at least 2 tokens")
        for p in positions:
            new = int(rng.integers(vocab.size - 1))
            seq[p] = new + (new >= seq[p])
        return seq
    if spec.mode == "delete":
        drop = set(positions.tolist())
        return [t for i, t in enumerate(seq) if i not in drop]
    inserted = rng.integers(vocab.size, size=k)
    for p, t in zip(positions[::-1], inserted[::-1]):
        seq.insert(int(p), int(t))
    return seq


def single_edits(tokens: Sequence[int], vocab_size: int, insertions: bool = True) -> Iterator[list[int]]:
    """Every sequence one substitution, deletion or (optionally) insertion away."""
    seq = list(tokens)
    n = len(seq)
    for i in range(n):
        for t in range(vocab_size):
            if t != seq[i]:
                yield seq[:i] + [t] + seq[i + 1:]
        yield seq[:i] + seq[i + 1:]
    if insertions:
        for i in range(n + 1):
            for t in range(vocab_size):
                yield seq[:i] + [t] + seq[i:]


def _green(tokens: Sequence[int], config: DetectorConfig, cache: _cipher.CipherCache) -> int:
    if len(tokens) < 2:
        return 0
    ranks = green_ranks(tokens, config, cache)
    return int(np.count_nonzero(ranks >= red_list_size(config.gamma, config.vocab_size)))


def worst_case_single_edit_drop(
    tokens: Sequence[int],
    config: DetectorConfig,
    insertions: bool = True,
    cache: Optional[_cipher.CipherCache] = None,
) -> int:
    """Largest decrease of the green count over all single-token edits (brute force)."""
    if len(tokens) < 2:
        raise SequenceTooShort(f"need at least 2 tokens, got {len(tokens)}")
    cache = cache or _cipher.CipherCache(config.key, config.vocab_size)
    base = _green(tokens, config, cache)
    worst = 0
    for edited in single_edits(tokens, config.vocab_size, insertions):
        worst = max(worst, base - _green(edited, config, cache))
    return worst
