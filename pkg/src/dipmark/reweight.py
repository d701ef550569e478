"""Reweight strategies: (distribution, cipher) -> watermarked distribution.

Every CDF-style strategy lays the token probabilities out on ``[0, 1]`` in
cipher order and reads new masses off a transformed cumulative curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import (
    CLAMP_TOL,
    Distribution,
    DipmarkError,
    InvalidParams,
    Permutation,
    red_list_size,
    validate_distribution,
)

KINDS = ("identity", "pw", "dip", "soft")


class DegenerateAlpha(DipmarkError, ValueError):
    pass


@numba.njit(cache=True)
def _compensated_cumsum(x):
    out = np.empty_like(x)
    s = 0.0
    c = 0.0
    for i in range(x.shape[0]):
        v = x[i]
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[i] = s + c
    return out


def _check_shapes(dist: Distribution, theta: Permutation) -> None:
    if dist.size != theta.size:
        raise InvalidParams(
            f"distribution over {dist.size} tokens but cipher over {theta.size}"
        )


def _from_cdf(cdf: np.ndarray, theta: Permutation) -> Distribution:
    masses = np.diff(cdf, prepend=0.0)
    masses[(masses < 0) & (masses >= -CLAMP_TOL)] = 0.0
    out = np.empty_like(masses)
    out[theta.order] = masses
    total = out.sum()
    if total > 0:
        out /= total
    return validate_distribution(out)


def permuted_cumsum(dist: Distribution, theta: Permutation) -> np.ndarray:
    """Cumulative probabilities ``S_i`` with tokens taken in cipher order."""
    return _compensated_cumsum(dist.probs[theta.order])


def pw_alpha(dist: Distribution, theta: Permutation, alpha: float) -> Distribution:
    """Zero the first ``alpha`` of probability mass in cipher order, rescale the rest."""
    _check_shapes(dist, theta)
    if alpha >= 1.0:
        raise DegenerateAlpha("alpha = 1 leaves no mass to rescale; use dip instead")
    if alpha < 0.0:
        raise InvalidParams(f"alpha must lie in [0, 1), got {alpha}")
    s = permuted_cumsum(dist, theta)
    cdf = np.maximum(s - alpha, 0.0) / (1.0 - alpha)
    return _from_cdf(cdf, theta)


def dip_reweight(dist: Distribution, theta: Permutation, alpha: float) -> Distribution:
    """Distribution-preserving reweight.

    Uses the closed-form CDF ``F = max(S - alpha, 0) + max(S - (1 - alpha), 0)``,
    which equals ``(1 - alpha) * pw_alpha(alpha) + alpha * pw_alpha(1 - alpha)``
    but needs no division and stays exact at ``alpha`` in ``{0, 1}``.
    """
    _check_shapes(dist, theta)
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParams(f"alpha must lie in [0, 1], got {alpha}")
    s = permuted_cumsum(dist, theta)
    cdf = np.maximum(s - alpha, 0.0) + np.maximum(s - (1.0 - alpha), 0.0)
    return _from_cdf(cdf, theta)


def green_mask(theta: Permutation, gamma: float) -> np.ndarray:
    """Boolean mask over token ids: True for the last ``N - ceil(gamma N)`` cipher entries."""
    mask = np.zeros(theta.size, dtype=bool)
    mask[theta.order[red_list_size(gamma, theta.size):]] = True
    return mask


def soft_reweight(
    dist: Distribution, theta: Permutation, gamma: float, delta: float
) -> Distribution:
    """Red/green logit bias: green tokens are multiplied by ``exp(delta)``."""
    _check_shapes(dist, theta)
    if delta < 0:
        raise InvalidParams(f"delta must be >= 0, got {delta}")
    if not 0.0 <= gamma < 1.0:
        raise InvalidParams(f"gamma must lie in [0, 1), got {gamma}")
    weights = np.where(green_mask(theta, gamma), math.exp(delta), 1.0)
    scaled = dist.probs * weights
    return validate_distribution(scaled / scaled.sum())


@dataclass(frozen=True)
class ReweightStrategy:
    kind: str = "dip"
    params: dict = field(default_factory=lambda: {"alpha": 0.45})

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParams(f"unknown strategy {self.kind!r}; expected one of {KINDS}")
        p = dict(self.params)
        if self.kind in ("pw", "dip"):
            alpha = float(p.get("alpha", 0.45))
            if not 0.0 <= alpha <= 1.0:
                raise InvalidParams(f"alpha must lie in [0, 1], got {alpha}")
            p = {"alpha": alpha}
        elif self.kind == "soft":
            gamma = float(p.get("gamma", 0.5))
            delta = float(p.get("delta", 1.0))
            if delta < 0 or not 0.0 <= gamma < 1.0:
                raise InvalidParams(f"bad soft parameters gamma={gamma}, delta={delta}")
            p = {"gamma": gamma, "delta": delta}
        else:
            p = {}
        object.__setattr__(self, "params", p)

    @classmethod
    def identity(cls) -> "ReweightStrategy":
        return cls("identity", {})

    @classmethod
    def dip(cls, alpha: float = 0.45) -> "ReweightStrategy":
        return cls("dip", {"alpha": alpha})

    @classmethod
    def pw(cls, alpha: float) -> "ReweightStrategy":
        return cls("pw", {"alpha": alpha})

    @classmethod
    def soft(cls, gamma: float = 0.5, delta: float = 1.0) -> "ReweightStrategy":
        return cls("soft", {"gamma": gamma, "delta": delta})

    @classmethod
    def parse(cls, text: str) -> "ReweightStrategy":
        """Parse ``"identity"``, ``"dip:alpha=0.45"``, ``"soft:gamma=0.5,delta=1.5"``..."""
        kind, _, rest = text.strip().partition(":")
        params = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            name, sep, value = item.partition("=")
            if not sep:
                raise InvalidParams(f"malformed strategy parameter {item!r} in {text!r}")
            try:
                params[name.strip()] = float(value)
            except ValueError as exc:
                raise InvalidParams(f"non-numeric value in {text!r}") from exc
        allowed = {"identity": set(), "pw": {"alpha"}, "dip": {"alpha"}, "soft": {"gamma", "delta"}}
        kind = kind.strip()
        if kind in allowed and not set(params) <= allowed[kind]:
            raise InvalidParams(f"unexpected parameters {sorted(set(params) - allowed[kind])}")
        return cls(kind, params)

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(f"{k}={v:g}" for k, v in self.params.items())


def apply(strategy: ReweightStrategy, dist: Distribution, theta: Permutation) -> Distribution:
    if strategy.kind == "identity":
        _check_shapes(dist, theta)
        return dist
    if strategy.kind == "dip":
        return dip_reweight(dist, theta, strategy.params["alpha"])
    if strategy.kind == "pw":
        return pw_alpha(dist, theta, strategy.params["alpha"])
    return soft_reweight(dist, theta, strategy.params["gamma"], strategy.params["delta"])
