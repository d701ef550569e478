"""Single-pass watermark detection.

Position ``i`` (1-based, ``i >= 2``) is scored with the cipher derived from
the up-to-``window`` tokens before it; the token is green when its rank in
that cipher is at least ``ceil(gamma N)``. Only the secret key is needed:
no prompt, no language model.

Scoring covers ``m = n - 1`` positions and compares against the realised
green fraction ``1 - gamma_eff`` with ``gamma_eff = ceil(gamma N) / N``, so
that under the null the green count is exactly ``Binomial(m, 1 - gamma_eff)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from . import cipher as _cipher
from .core import DipmarkError, InvalidParams, SecretKey, effective_gamma, red_list_size

MODES = ("exact", "kl", "approx")
P_FLOOR = np.finfo(float).tiny


class SequenceTooShort(DipmarkError, ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    """Set ``z`` for a fixed threshold; otherwise it is derived from ``fpr`` and ``mode``."""

    key: SecretKey
    vocab_size: int
    gamma: float = 0.5
    window: int = 1
    fpr: float = 0.01
    mode: str = "exact"
    z: Optional[float] = None

    def __post_init__(self):
        if self.vocab_size < 1:
            raise InvalidParams(f"vocab_size must be >= 1, got {self.vocab_size}")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidParams(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.window < 1:
            raise InvalidParams(f"window must be >= 1, got {self.window}")
        if self.z is None and not 0.0 < self.fpr < 1.0:
            raise InvalidParams(f"target FPR must lie in (0, 1), got {self.fpr}")
        if self.mode not in MODES:
            raise InvalidParams(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def gamma_eff(self) -> float:
        return effective_gamma(self.gamma, self.vocab_size)


@dataclass(frozen=True)
class DetectionReport:
    scored: int
    green_count: int
    phi: float
    p_kl: float
    p_exact: float
    z_baseline: float
    p_z_baseline: float
    threshold: float
    decision: bool

    def to_json(self) -> dict:
        return asdict(self)


def green_ranks(
    tokens: Sequence[int],
    config: DetectorConfig,
    cache: Optional[_cipher.CipherCache] = None,
) -> np.ndarray:
    """Rank of ``x_i`` in its cipher for every scored position ``i = 2..n``."""
    n = len(tokens)
    if n < 2:
        raise SequenceTooShort(f"need at least 2 tokens, got {n}")
    a, vocab = config.window, config.vocab_size
    out = np.empty(n - 1, dtype=np.int64)
    for i in range(1, n):
        tok = int(tokens[i])
        if not 0 <= tok < vocab:
            raise InvalidParams(f"token id {tok} outside vocabulary of size {vocab}")
        window = tokens[max(0, i - a):i]
        if cache is not None:
            out[i - 1] = cache.ranks(window)[tok]
        else:
            seed = _cipher.derive_seed(config.key, _cipher.TextureKey(window))
            order = _cipher.permutation_from_seed(seed, vocab).order
            out[i - 1] = int(np.flatnonzero(order == tok)[0])
    return out


def green_count(
    tokens: Sequence[int],
    config: DetectorConfig,
    cache: Optional[_cipher.CipherCache] = None,
) -> tuple[int, int]:
    ranks = green_ranks(tokens, config, cache)
    red = red_list_size(config.gamma, config.vocab_size)
    return ranks.size, int(np.count_nonzero(ranks >= red))


def phi_statistic(m: int, green: int, gamma_eff: float) -> float:
    _check_counts(m, green)
    return green / m - (1.0 - gamma_eff)


def kl_bernoulli(p: float, q: float) -> float:
    """KL divergence between Bernoulli(p) and Bernoulli(q), with 0 log 0 = 0."""
    total = 0.0
    if p > 0:
        total += p * math.log(p / q) if q > 0 else math.inf
    if p < 1:
        total += (1 - p) * math.log((1 - p) / (1 - q)) if q < 1 else math.inf
    return total


def p_value_kl(m: int, green: int, gamma_eff: float) -> float:
    """Chernoff bound ``exp(-m KL(L/m || 1 - gamma_eff))`` on the null upper tail."""
    _check_counts(m, green)
    q = 1.0 - gamma_eff
    frac = green / m
    if frac <= q:
        return 1.0
    return max(math.exp(-m * kl_bernoulli(frac, q)), P_FLOOR)


def p_value_exact(m: int, green: int, gamma_eff: float) -> float:
    """``P[Binomial(m, 1 - gamma_eff) >= green]`` via the regularized incomplete beta."""
    _check_counts(m, green)
    if green <= 0:
        return 1.0
    return float(min(1.0, max(stats.binom.sf(green - 1, m, 1.0 - gamma_eff), P_FLOOR)))


def z_test_baseline(m: int, green: int, gamma: float) -> tuple[float, float]:
    """One-proportion z-test on the green count; normal upper-tail p-value."""
    _check_counts(m, green)
    if not 0.0 < gamma < 1.0:
        raise InvalidParams(f"z-test needs 0 < gamma < 1, got {gamma}")
    z = (green - (1.0 - gamma) * m) / math.sqrt(m * gamma * (1.0 - gamma))
    return z, max(float(stats.norm.sf(z)), P_FLOOR)


def _check_counts(m: int, green: int) -> None:
    if m < 1:
        raise InvalidParams(f"need at least one scored position, got {m}")
    if not 0 <= green <= m:
        raise InvalidParams(f"green count {green} outside [0, {m}]")


def threshold_for_fpr(m: int, gamma_eff: float, target_fpr: float, mode: str = "exact") -> float:
    """Threshold on the green-token ratio that keeps the null FPR at or below the target.

    ``approx`` uses the small-deviation form ``exp(-2 m t^2)`` of the bound,
    ``kl`` inverts the bound itself by bisection, and ``exact`` returns
    ``k/m - (1 - gamma_eff)`` for the smallest ``k`` whose exact binomial
    tail is within the target. A threshold above ``gamma_eff`` cannot be
    exceeded by any sequence of this length.
    """
    if not 0.0 < target_fpr < 1.0:
        raise InvalidParams(f"target FPR must lie in (0, 1), got {target_fpr}")
    if m < 1:
        raise InvalidParams(f"need at least one scored position, got {m}")
    q = 1.0 - gamma_eff
    if mode == "approx":
        return math.sqrt(math.log(1.0 / target_fpr) / (2.0 * m))
    if mode == "exact":
        return minimal_green_count(m, gamma_eff, target_fpr, "exact") / m - q
    if mode != "kl":
        raise InvalidParams(f"mode must be one of {MODES}, got {mode!r}")
    if q >= 1.0 or q ** m > target_fpr:
        return gamma_eff
    bound = lambda t: math.exp(-m * kl_bernoulli(q + t, q))
    lo, hi = 0.0, gamma_eff
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if bound(mid) <= target_fpr:
            hi = mid
        else:
            lo = mid
    return hi


def minimal_green_count(m: int, gamma_eff: float, target_fpr: float, mode: str = "exact") -> int:
    """Smallest green count whose p-value (exact tail or KL bound) is within the target.

    Returns ``m + 1`` when no count of this length qualifies.
    """
    ks = np.arange(m + 1)
    if mode == "exact":
        tails = stats.binom.sf(ks - 1, m, 1.0 - gamma_eff)
    elif mode == "kl":
        tails = np.array([p_value_kl(m, int(k), gamma_eff) for k in ks])
    else:
        raise InvalidParams(f"minimal_green_count supports exact|kl, got {mode!r}")
    hits = np.flatnonzero(tails <= target_fpr)
    return int(hits[0]) if hits.size else m + 1


def resolve_threshold(m: int, config: DetectorConfig) -> float:
    if config.z is not None:
        return float(config.z)
    return threshold_for_fpr(m, config.gamma_eff, config.fpr, config.mode)


def report_from_counts(m: int, green: int, config: DetectorConfig) -> DetectionReport:
    g = config.gamma_eff
    phi = phi_statistic(m, green, g)
    if 0.0 < g < 1.0:
        z_b, p_z = z_test_baseline(m, green, g)
    else:
        z_b, p_z = math.nan, math.nan
    z = resolve_threshold(m, config)
    return DetectionReport(
        scored=m,
        green_count=green,
        phi=phi,
        p_kl=p_value_kl(m, green, g),
        p_exact=p_value_exact(m, green, g),
        z_baseline=z_b,
        p_z_baseline=p_z,
        threshold=z,
        decision=bool(phi > z),
    )


def detect(
    tokens: Sequence[int],
    config: DetectorConfig,
    cache: Optional[_cipher.CipherCache] = None,
) -> DetectionReport:
    m, green = green_count(tokens, config, cache)
    return report_from_counts(m, green, config)


def detect_batch(
    sequences: Iterable[Sequence[int]],
    config: DetectorConfig,
    cache: Optional[_cipher.CipherCache] = None,
) -> list[DetectionReport]:
    return [detect(seq, config, cache) for seq in sequences]


def step_digests(
    tokens: Sequence[int], key: SecretKey, window: int, prefix: Sequence[int] = ()
) -> list[Optional[str]]:
    """Cipher digest used at each position of ``tokens`` given ``prefix`` as prior context."""
    context = list(prefix) + list(tokens)
    offset = len(prefix)
    out: list[Optional[str]] = []
    for i in range(len(tokens)):
        pos = offset + i
        if pos == 0:
            out.append(None)
            continue
        tk = _cipher.extract_texture_key(context, pos, window)
        out.append(_cipher.derive_seed(key, tk).hex())
    return out
