"""Per-step watermark ciphers: keyed permutations of the vocabulary.

Wire format (version ``CIPHER_VERSION``), normative for cross-implementation
detection:

* texture key encoding: ``u32le(len) || u32le(id_0) || ... || u32le(id_{L-1})``
* seed: ``SHA-256(key || 0x01 || texture_key_encoding)`` (32 bytes)
* stream: ChaCha20 (RFC 7539, 20 rounds) keyed by the seed, 96-bit zero nonce,
  block counter starting at 0; consumed as little-endian 64-bit words
* shuffle: Fisher-Yates over ``[0, N)``; for ``i = N-1 .. 1`` draw words until
  ``w < floor(2**64 / (i+1)) * (i+1)``, then swap positions ``i`` and ``w mod (i+1)``
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from .core import DipmarkError, InvalidParams, Permutation, SecretKey

CIPHER_VERSION = "dipmark-cipher/1 sha256+chacha20+fy64"
DOMAIN_SEPARATOR = b"\x01"
_U64_MAX = np.uint64(0xFFFFFFFFFFFFFFFF)
_ZERO_NONCE = bytes(16)  # 4-byte block counter (0) followed by 12-byte nonce


class NoContext(DipmarkError, ValueError):
    """No preceding token is available to form a texture key."""


@dataclass(frozen=True)
class TextureKey:
    tokens: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if not self.tokens:
            raise NoContext("texture key must contain at least one token")
        if any(t < 0 or t > 0xFFFFFFFF for t in self.tokens):
            raise InvalidParams("texture key ids must fit in an unsigned 32-bit integer")

    def encode(self) -> bytes:
        return struct.pack(f"<I{len(self.tokens)}I", len(self.tokens), *self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class CipherSeed:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise InvalidParams(f"cipher seed must be 32 bytes, got {len(self.digest)}")

    def hex(self) -> str:
        return self.digest.hex()


@dataclass
class HistoryLog:
    """Texture keys already used in one generation run."""

    seen: set = field(default_factory=set)

    def check_and_insert(self, tk: TextureKey) -> bool:
        enc = tk.encode()
        if enc in self.seen:
            return True
        self.seen.add(enc)
        return False

    def clear(self) -> None:
        self.seen.clear()

    def __len__(self) -> int:
        return len(self.seen)


def history_check_and_insert(hist: HistoryLog, tk: TextureKey) -> bool:
    """True if ``tk`` was already logged; otherwise log it and return False."""
    return hist.check_and_insert(tk)


def extract_texture_key(context: Sequence[int], position: int, window: int) -> TextureKey:
    """The ``min(window, position)`` tokens preceding ``context[position]``, oldest first."""
    if window < 1:
        raise InvalidParams(f"window must be >= 1, got {window}")
    if position > len(context):
        raise InvalidParams(f"position {position} beyond context of length {len(context)}")
    if position < 1:
        raise NoContext("no token precedes position 0")
    return TextureKey(tuple(context[max(0, position - window):position]))


def derive_seed(key: SecretKey, tk: TextureKey) -> CipherSeed:
    h = hashlib.sha256()
    h.update(key.data)
    h.update(DOMAIN_SEPARATOR)
    h.update(tk.encode())
    return CipherSeed(h.digest())


def keystream_words(seed: CipherSeed, count: int, start_word: int = 0) -> np.ndarray:
    """``count`` little-endian uint64 words of the ChaCha20 stream keyed by ``seed``."""
    enc = Cipher(algorithms.ChaCha20(seed.digest, _ZERO_NONCE), mode=None).encryptor()
    if start_word:
        enc.update(bytes(8 * start_word))
    raw = enc.update(bytes(8 * count))
    return np.frombuffer(raw, dtype="<u8").astype(np.uint64)


@numba.njit(cache=True)
def _shuffle(words, out):
    # returns words consumed, or -1 if the buffer ran dry
    n = out.shape[0]
    w = 0
    for i in range(n - 1, 0, -1):
        bound = np.uint64(i + 1)
        limit = _U64_MAX - (_U64_MAX % bound + np.uint64(1)) % bound
        while True:
            if w >= words.shape[0]:
                return -1
            x = words[w]
            w += 1
            if x <= limit:
                break
        j = np.int64(x % bound)
        tmp = out[i]
        out[i] = out[j]
        out[j] = tmp
    return w


def shuffle_indices(seed: CipherSeed, n: int) -> np.ndarray:
    if n < 1:
        raise InvalidParams(f"vocabulary size must be >= 1, got {n}")
    budget = n + 7
    while True:
        out = np.arange(n, dtype=np.int64)
        words = keystream_words(seed, budget)
        if _shuffle(words, out) >= 0:
            return out
        budget *= 2


def permutation_from_seed(seed: CipherSeed, n: int) -> Permutation:
    return Permutation(shuffle_indices(seed, n))


def cipher(key: SecretKey, tk: TextureKey, n: int) -> Permutation:
    return permutation_from_seed(derive_seed(key, tk), n)


class CipherCache:
    """Memoized token ranks per texture key for one (key, vocabulary size).

    Repeated texture keys are common with short windows, so batch detection
    and brute-force robustness checks reuse ranks instead of reshuffling.
    """

    def __init__(self, key: SecretKey, vocab_size: int):
        self.key = key
        self.vocab_size = vocab_size
        self._orders: dict[tuple[int, ...], np.ndarray] = {}
        self._ranks: dict[tuple[int, ...], np.ndarray] = {}
        self.derivations = 0

    def order(self, tokens: Iterable[int]) -> np.ndarray:
        tk = tuple(int(t) for t in tokens)
        hit = self._orders.get(tk)
        if hit is None:
            hit = shuffle_indices(derive_seed(self.key, TextureKey(tk)), self.vocab_size)
            hit.setflags(write=False)
            self._orders[tk] = hit
            self.derivations += 1
        return hit

    def ranks(self, tokens: Iterable[int]) -> np.ndarray:
        tk = tuple(int(t) for t in tokens)
        hit = self._ranks.get(tk)
        if hit is None:
            order = self.order(tk)
            hit = np.empty_like(order)
            hit[order] = np.arange(self.vocab_size)
            self._ranks[tk] = hit
        return hit

    def __len__(self) -> int:
        return len(self._orders)
