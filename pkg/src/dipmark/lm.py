"""Desk-scale token distribution providers.

A provider is anything with a ``vocab_size`` attribute and a
``next_distribution(context)`` method returning a :class:`Distribution`.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import (
    Distribution,
    DipmarkError,
    InvalidParams,
    Vocabulary,
    validate_distribution,
)


class ProviderError(DipmarkError, RuntimeError):
    pass


class EmptyCorpus(DipmarkError, ValueError):
    pass


class AllZeroTopK(DipmarkError, ValueError):
    pass


@runtime_checkable
class DistributionProvider(Protocol):
    vocab_size: int

    def next_distribution(self, context: Sequence[int]) -> Distribution: ...


def next_distribution(provider: DistributionProvider, context: Sequence[int]) -> Distribution:
    try:
        dist = provider.next_distribution(context)
    except DipmarkError:
        raise
    except Exception as exc:
        raise ProviderError(f"{type(provider).__name__} failed: {exc}") from exc
    if dist.size != provider.vocab_size:
        raise ProviderError(
            f"provider returned {dist.size} probabilities for vocabulary {provider.vocab_size}"
        )
    return dist


class NGramModel:
    """Additively smoothed n-gram model.

    ``P(t | ctx) = (count(ctx, t) + lam) / (sum_s count(ctx, s) + lam * N)`` where
    ``ctx`` is the last ``order - 1`` tokens. Contexts shorter than that (the
    very start of a sequence) are treated as unseen.
    """

    def __init__(
        self,
        order: int,
        lam: float,
        vocab: Vocabulary,
        counts: dict[tuple[int, ...], dict[int, int]],
    ):
        if order < 1:
            raise InvalidParams(f"order must be >= 1, got {order}")
        if lam < 0:
            raise InvalidParams(f"smoothing must be >= 0, got {lam}")
        self.order = order
        self.lam = float(lam)
        self.vocab = vocab
        self.vocab_size = vocab.size
        self.counts = {}
        for ctx, row in counts.items():
            ctx = tuple(int(t) for t in ctx)
            if len(ctx) != order - 1:
                raise InvalidParams(f"context {ctx} has wrong length for order {order}")
            ids = np.fromiter(row.keys(), dtype=np.int64, count=len(row))
            vals = np.fromiter(row.values(), dtype=np.float64, count=len(row))
            if np.any(vals < 0) or (ids.size and (ids.min() < 0 or ids.max() >= vocab.size)):
                raise InvalidParams(f"bad counts for context {ctx}")
            self.counts[ctx] = (ids, vals, float(vals.sum()))

    def next_distribution(self, context: Sequence[int]) -> Distribution:
        k = self.order - 1
        ctx = tuple(context[len(context) - k:]) if k and len(context) >= k else ()
        probs = np.full(self.vocab_size, self.lam)
        total = self.lam * self.vocab_size
        entry = self.counts.get(ctx) if (k == 0 or len(ctx) == k) else None
        if entry is not None:
            ids, vals, row_total = entry
            probs[ids] += vals
            total += row_total
        if total <= 0:
            raise ProviderError(f"context {ctx} unseen and smoothing is zero")
        return Distribution(probs / total)

    def to_json(self) -> dict:
        return {
            "type": "ngram",
            "order": self.order,
            "lambda": self.lam,
            "vocab_size": self.vocab_size,
            "labels": list(self.vocab.labels) if self.vocab.labels else None,
            "counts": [
                [list(ctx), [[int(t), int(c)] for t, c in zip(ids, vals)]]
                for ctx, (ids, vals, _) in sorted(self.counts.items())
            ],
        }


def ngram_train(
    corpus: Iterable[Sequence[int]],
    order: int,
    lam: float,
    vocab: Optional[Vocabulary] = None,
) -> NGramModel:
    """Count every ``order``-length window of every sequence in ``corpus``."""
    if order < 1:
        raise InvalidParams(f"order must be >= 1, got {order}")
    seqs = [list(map(int, s)) for s in corpus]
    if not any(seqs):
        raise EmptyCorpus("corpus contains no tokens")
    if vocab is None:
        vocab = Vocabulary(max(max(s) for s in seqs if s) + 1)
    table: dict[tuple[int, ...], Counter] = defaultdict(Counter)
    for seq in seqs:
        for t in seq:
            vocab.check(t)
        for i in range(order - 1, len(seq)):
            table[tuple(seq[i - order + 1:i])][seq[i]] += 1
    return NGramModel(order, lam, vocab, {ctx: dict(c) for ctx, c in table.items()})


@dataclass
class TableModel:
    """Fixed per-position distributions, cycled; position = ``len(context) - offset``."""

    steps: list
    offset: int = 0

    def __post_init__(self):
        if not self.steps:
            raise InvalidParams("table model needs at least one step")
        self.steps = [
            s if isinstance(s, Distribution) else validate_distribution(s) for s in self.steps
        ]
        sizes = {s.size for s in self.steps}
        if len(sizes) != 1:
            raise InvalidParams(f"steps disagree on vocabulary size: {sorted(sizes)}")
        self.vocab_size = sizes.pop()

    def next_distribution(self, context: Sequence[int]) -> Distribution:
        return self.steps[(len(context) - self.offset) % len(self.steps)]

    def to_json(self) -> dict:
        return {
            "type": "table",
            "vocab_size": self.vocab_size,
            "offset": self.offset,
            "steps": [s.probs.tolist() for s in self.steps],
        }


def top_k_truncate(dist: Distribution, k: int) -> Distribution:
    """Keep the ``k`` most likely tokens (ties to the lower id) and renormalize."""
    n = dist.size
    if not 1 <= k <= n:
        raise InvalidParams(f"k must lie in [1, {n}], got {k}")
    p = dist.probs
    keep = np.lexsort((np.arange(n), -p))[:k]
    out = np.zeros(n)
    out[keep] = p[keep]
    mass = out.sum()
    if mass <= 0:
        raise AllZeroTopK(f"top-{k} tokens carry no probability")
    return validate_distribution(out / mass)


class TopKProvider:
    """Wraps a provider so that only its top-k tokens are ever offered."""

    def __init__(self, base: DistributionProvider, k: int):
        self.base = base
        self.k = k
        self.vocab_size = base.vocab_size

    def next_distribution(self, context: Sequence[int]) -> Distribution:
        return top_k_truncate(next_distribution(self.base, context), self.k)


class CountingProvider:
    """Counts calls to the wrapped provider."""

    def __init__(self, base: DistributionProvider):
        self.base = base
        self.vocab_size = base.vocab_size
        self.calls = 0

    def next_distribution(self, context: Sequence[int]) -> Distribution:
        self.calls += 1
        return self.base.next_distribution(context)


# -- persistence ------------------------------------------------------------

_WORD = re.compile(r"\S+")


def tokenize_corpus(texts: Iterable[str]) -> tuple[list[list[int]], Vocabulary]:
    """Whitespace-tokenize paragraphs; distinct words get dense ids in order of first use."""
    index: dict[str, int] = {}
    seqs = []
    for text in texts:
        for para in re.split(r"\n\s*\n", text):
            words = _WORD.findall(para)
            if words:
                seqs.append([index.setdefault(w, len(index)) for w in words])
    if not index:
        raise EmptyCorpus("no words found")
    return seqs, Vocabulary(len(index), tuple(index))


def load_corpus(paths: Iterable[str | Path]) -> tuple[list[list[int]], Vocabulary]:
    return tokenize_corpus(Path(p).read_text(encoding="utf-8") for p in paths)


def model_from_json(obj: dict):
    kind = obj.get("type")
    try:
        if kind == "ngram":
            labels = obj.get("labels")
            vocab = Vocabulary(int(obj["vocab_size"]), tuple(labels) if labels else None)
            counts = {tuple(ctx): {int(t): int(c) for t, c in row} for ctx, row in obj["counts"]}
            return NGramModel(int(obj["order"]), float(obj["lambda"]), vocab, counts)
        if kind == "table":
            model = TableModel(list(obj["steps"]), int(obj.get("offset", 0)))
            if "vocab_size" in obj and int(obj["vocab_size"]) != model.vocab_size:
                raise InvalidParams("vocab_size disagrees with the step distributions")
            return model
    except KeyError as exc:
        raise InvalidParams(f"model file missing field {exc}") from exc
    raise InvalidParams(f"unknown model type {kind!r}")


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_json()), encoding="utf-8")


def load_model(path: str | Path):
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=None)
def default_provider(order: int = 3, lam: float = 0.1) -> NGramModel:
    """Order-3 n-gram with ``lambda = 0.1`` over the bundled public-domain corpus."""
    text = resources.files("dipmark").joinpath("data/corpus.txt").read_text(encoding="utf-8")
    seqs, vocab = tokenize_corpus([text])
    return ngram_train(seqs, order, lam, vocab)


def corpus_prompts(order: int = 3) -> list[tuple[int, ...]]:
    """All ``order - 1``-token windows of the bundled corpus, usable as prompts."""
    text = resources.files("dipmark").joinpath("data/corpus.txt").read_text(encoding="utf-8")
    seqs, _ = tokenize_corpus([text])
    k = max(order - 1, 1)
    return sorted({tuple(s[i:i + k]) for s in seqs for i in range(len(s) - k + 1)})
