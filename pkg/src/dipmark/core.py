"""Value types shared across the package.

Token ids are dense integers ``0..N-1``; callers tokenize text themselves.
All types are immutable once constructed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NORMALIZATION_TOL = 1e-9
CLAMP_TOL = 1e-12
MIN_KEY_BYTES = 16


class DipmarkError(Exception):
    """Base class for all errors raised by this package."""


class NegativeProbability(DipmarkError, ValueError):
    pass


class NotNormalized(DipmarkError, ValueError):
    pass


class InvalidPermutation(DipmarkError, ValueError):
    pass


class InvalidKey(DipmarkError, ValueError):
    pass


class InvalidParams(DipmarkError, ValueError):
    pass


class OutOfVocab(DipmarkError, ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    size: int
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.size < 1:
            raise InvalidParams(f"vocabulary size must be >= 1, got {self.size}")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.size:
                raise InvalidParams(
                    f"{len(self.labels)} labels for a vocabulary of size {self.size}"
                )

    def check(self, token: int) -> int:
        if not 0 <= token < self.size:
            raise OutOfVocab(f"token id {token} outside vocabulary of size {self.size}")
        return token

    def decode(self, tokens: Sequence[int]) -> str:
        if self.labels is None:
            return " ".join(str(t) for t in tokens)
        return " ".join(self.labels[t] for t in tokens)


@dataclass(frozen=True, eq=False)
class Distribution:
    """A probability vector over the vocabulary.

    Construct through :func:`validate_distribution` unless the vector is
    already known to be valid.
    """

    probs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.probs, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, idx):
        return self.probs[idx]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Distribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __repr__(self) -> str:
        return f"Distribution({np.array2string(self.probs, precision=6)})"


def validate_distribution(probs) -> Distribution:
    """Check a probability vector and wrap it as a :class:`Distribution`.

    Entries in ``[-1e-12, 0)`` are floating-point dust from CDF subtraction;
    they are clamped to zero and the vector is renormalized.

    Raises
    ------
    NegativeProbability
        If any entry is below ``-1e-12``.
    NotNormalized
        If the entries do not sum to one within ``1e-9`` after clamping.
    """
    arr = np.asarray(probs, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InvalidParams("distribution must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise NotNormalized("distribution contains non-finite entries")
    if np.any(arr < -CLAMP_TOL):
        raise NegativeProbability(f"entry {arr.min():.3e} is negative")
    if np.any(arr < 0):
        arr = np.where(arr < 0, 0.0, arr)
        arr = arr / float(arr.sum())
    total = float(arr.sum())
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NotNormalized(f"entries sum to {total!r}")
    return Distribution(arr)


@dataclass(frozen=True, eq=False)
class Permutation:
    """An ordering of the vocabulary: ``order[r]`` is the token at rank ``r``."""

    order: np.ndarray

    def __post_init__(self):
        arr = np.array(self.order, dtype=np.int64).ravel()
        n = arr.shape[0]
        if n == 0:
            raise InvalidPermutation("permutation must be non-empty")
        seen = np.zeros(n, dtype=bool)
        if arr.min() < 0 or arr.max() >= n:
            raise InvalidPermutation("entries must lie in 0..N-1")
        seen[arr] = True
        if not seen.all():
            raise InvalidPermutation("entries must be distinct")
        arr.setflags(write=False)
        object.__setattr__(self, "order", arr)

    @property
    def size(self) -> int:
        return self.order.shape[0]

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.order, other.order)

    def __hash__(self) -> int:
        return hash(self.order.tobytes())

    def __repr__(self) -> str:
        return f"Permutation({self.order.tolist()})"

    def reversed(self) -> "Permutation":
        return Permutation(self.order[::-1])

    def ranks(self) -> np.ndarray:
        """Rank of every token id, i.e. the inverse permutation as an array."""
        return permutation_inverse(self).order


def permutation_inverse(p: Permutation) -> Permutation:
    inv = np.empty_like(p.order)
    inv[p.order] = np.arange(p.size, dtype=np.int64)
    return Permutation(inv)


@dataclass(frozen=True)
class SecretKey:
    data: bytes = field(repr=False)

    def __post_init__(self):
        if not isinstance(self.data, (bytes, bytearray)):
            raise InvalidKey("secret key must be bytes")
        object.__setattr__(self, "data", bytes(self.data))
        if len(self.data) < MIN_KEY_BYTES:
            raise InvalidKey(
                f"secret key needs at least {MIN_KEY_BYTES} bytes, got {len(self.data)}"
            )

    @classmethod
    def from_hex(cls, text: str) -> "SecretKey":
        try:
            raw = bytes.fromhex(text.strip())
        except ValueError as exc:
            raise InvalidKey(f"not a hex string: {text!r}") from exc
        return cls(raw)

    def hex(self) -> str:
        return self.data.hex()

    def __repr__(self) -> str:
        return f"SecretKey(<{len(self.data)} bytes>)"


@dataclass(frozen=True)
class WatermarkParams:
    """alpha: reweight quantile; gamma: red/green separator; window: texture-key length."""

    alpha: float = 0.45
    gamma: float = 0.5
    window: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParams(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidParams(f"gamma must lie in [0, 1), got {self.gamma}")
        if int(self.window) != self.window or self.window < 1:
            raise InvalidParams(f"window must be a positive integer, got {self.window}")


def red_list_size(gamma: float, n: int) -> int:
    """``ceil(gamma * n)``, robust to representation error such as 0.3 * 10."""
    return min(n, max(0, math.ceil(gamma * n - 1e-9)))


def effective_gamma(gamma: float, n: int) -> float:
    """Red fraction actually realised on a vocabulary of size ``n``."""
    return red_list_size(gamma, n) / n
