"""Experiment harness.

Each experiment returns a :class:`MetricTable`; :func:`write_outputs` saves
it as ``metrics.csv``, ``metrics.json`` and ``manifest.json``. All
randomness descends from one master seed through
:class:`numpy.random.SeedSequence`, one child stream per trial, so results
are bit-identical for a given seed regardless of ``workers``.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import __version__
from . import cipher as _cipher
from .core import (
    Distribution,
    InvalidParams,
    Permutation,
    SecretKey,
    Vocabulary,
    WatermarkParams,
    effective_gamma,
    red_list_size,
    validate_distribution,
)
from .detector import (
    DetectorConfig,
    green_ranks,
    p_value_exact,
    p_value_kl,
    threshold_for_fpr,
    z_test_baseline,
)
from .generator import GenerationConfig, generate, generate_unwatermarked
from .lm import DistributionProvider, TopKProvider, corpus_prompts, default_provider, load_model
from .reweight import ReweightStrategy, dip_reweight
from .robustness import AttackSpec, attack

EXPERIMENTS = (
    "preserve_exact",
    "preserve_mc",
    "calibrate",
    "detectability",
    "resilience",
    "gamma_sweep",
    "timing",
)
LENGTH_RANGE = (255, 265)
DEFAULT_FPRS = (0.1, 0.01)


# -- tables -----------------------------------------------------------------


@dataclass
class MetricRow:
    label: str
    fpr: Optional[float] = None
    tnr: Optional[float] = None
    tpr: Optional[float] = None
    fnr: Optional[float] = None
    auc: Optional[float] = None
    mean_phi: Optional[float] = None
    mean_green_ratio: Optional[float] = None
    wall_time_s: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("fpr", "tnr", "tpr", "fnr", "auc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise InvalidParams(f"{name}={v} outside [0, 1] in row {self.label!r}")
        if self.fpr is not None and self.tnr is None:
            self.tnr = 1.0 - self.fpr
        if self.tpr is not None and self.fnr is None:
            self.fnr = 1.0 - self.tpr


@dataclass
class MetricTable:
    experiment: str
    rows: list = field(default_factory=list)

    def add(self, row: MetricRow) -> MetricRow:
        self.rows.append(row)
        return row

    def row(self, label: str) -> MetricRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_json(self) -> dict:
        return {"experiment": self.experiment, "rows": [asdict(r) for r in self.rows]}

    def write_csv(self, path: Path) -> None:
        extra_keys = sorted({k for r in self.rows for k in r.extra})
        base = ["label", "fpr", "tnr", "tpr", "fnr", "auc", "mean_phi", "mean_green_ratio", "wall_time_s"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(base + extra_keys)
            for r in self.rows:
                d = asdict(r)
                w.writerow([_fmt(d[k]) for k in base] + [_fmt(r.extra.get(k)) for k in extra_keys])

    def __str__(self) -> str:
        lines = [f"[{self.experiment}]"]
        for r in self.rows:
            cells = [f"{k}={_fmt(v)}" for k, v in asdict(r).items() if k not in ("label", "extra") and v is not None]
            cells += [f"{k}={_fmt(v)}" for k, v in r.extra.items()]
            lines.append(f"  {r.label}: " + " ".join(cells))
        return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def binomial_sigma(p: float, trials: int) -> float:
    return math.sqrt(p * (1.0 - p) / trials)


def roc_auc(positive: Sequence[float], negative: Sequence[float]) -> float:
    """Area under the ROC curve (Mann-Whitney form; ties count one half).

    Identical to trapezoidal integration of the empirical ROC over all thresholds.
    """
    pos = np.asarray(positive, dtype=float)
    neg = np.asarray(negative, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise InvalidParams("AUC needs at least one positive and one negative score")
    ranks = stats.rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


# -- distribution preservation ---------------------------------------------


def preserve_exact(alpha: float, dist: Distribution, max_n: int = 6) -> float:
    """Max entrywise error between the all-permutation average of DiP and the input."""
    n = dist.size
    if n > max_n:
        raise InvalidParams(f"{n}! permutations exceeds the enumeration cap ({max_n})")
    acc = np.zeros((math.factorial(n), n))
    for i, order in enumerate(itertools.permutations(range(n))):
        acc[i] = dip_reweight(dist, Permutation(order), alpha).probs
    avg = np.array([math.fsum(acc[:, j]) for j in range(n)]) / acc.shape[0]
    return float(np.max(np.abs(avg - dist.probs)))


def preserve_mc(alpha: float, dist: Distribution, samples: int = 100_000, seed: int = 0) -> float:
    """Total-variation distance between the DiP average over hashed ciphers and the input.

    Ciphers come from the cipher module with a fixed key and ``samples``
    distinct texture keys.
    """
    if samples < 1:
        raise InvalidParams("samples must be >= 1")
    key = experiment_key(seed)
    acc = np.zeros(dist.size)
    for i in range(samples):
        theta = _cipher.cipher(key, _cipher.TextureKey((i,)), dist.size)
        acc += dip_reweight(dist, theta, alpha).probs
    return 0.5 * float(np.abs(acc / samples - dist.probs).sum())


# -- workloads --------------------------------------------------------------


@dataclass
class Workload:
    """A provider plus the prompts sequences are seeded with."""

    provider: DistributionProvider
    prompts: list

    @property
    def vocab_size(self) -> int:
        return self.provider.vocab_size


def default_workload() -> Workload:
    return Workload(default_provider(), corpus_prompts(3))


def experiment_key(seed: int) -> SecretKey:
    return SecretKey(hashlib.sha256(b"dipmark-bench-key" + int(seed).to_bytes(8, "little", signed=True)).digest())


@dataclass(frozen=True)
class _TrialPlan:
    length: int
    prompt: tuple
    sample_seed: int


def plan_trials(workload: Workload, trials: int, seed: int, stream: str) -> list[_TrialPlan]:
    """Per-trial length (uniform on 255..265), prompt and sampling seed."""
    tag = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
    children = np.random.SeedSequence([seed, tag]).spawn(trials)
    plans = []
    for child in children:
        rng = np.random.default_rng(child)
        length = int(rng.integers(LENGTH_RANGE[0], LENGTH_RANGE[1] + 1))
        prompt = tuple(workload.prompts[int(rng.integers(len(workload.prompts)))]) if workload.prompts else ()
        plans.append(_TrialPlan(length, prompt, int(child.generate_state(1, np.uint64)[0])))
    return plans


def _gen_chunk(args):
    provider, key, strategy, window, plans = args
    if strategy is None:
        return [generate_unwatermarked(provider, p.length + 1, p.prompt, p.sample_seed) for p in plans]
    cache = _cipher.CipherCache(key, provider.vocab_size)
    out = []
    for p in plans:
        cfg = GenerationConfig(key, p.length + 1, strategy, WatermarkParams(window=window), p.prompt, p.sample_seed)
        out.append(generate(provider, cfg, cache).tokens)
    return out


def make_corpus(
    workload: Workload,
    trials: int,
    seed: int,
    strategy: Optional[ReweightStrategy],
    key: Optional[SecretKey] = None,
    window: int = 1,
    workers: int = 1,
    stream: str = "corpus",
) -> list[list[int]]:
    """``trials`` generated sequences; ``strategy=None`` gives unwatermarked text.

    Each sequence has ``length + 1`` tokens so that exactly ``length`` positions are scored.
    """
    plans = plan_trials(workload, trials, seed, stream)
    if workers <= 1 or trials < 2 * workers:
        return _gen_chunk((workload.provider, key, strategy, window, plans))
    chunks = [plans[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(workers) as pool:
        parts = list(pool.map(_gen_chunk, [(workload.provider, key, strategy, window, c) for c in chunks]))
    out = [None] * trials
    for w, part in enumerate(parts):
        out[w::workers] = part
    return out


def green_stats(
    sequences: Sequence[Sequence[int]], config: DetectorConfig, cache=None
) -> tuple[np.ndarray, np.ndarray]:
    """(scored counts, green counts) per sequence."""
    cache = cache if cache is not None else _cipher.CipherCache(config.key, config.vocab_size)
    red = red_list_size(config.gamma, config.vocab_size)
    ms, gs = [], []
    for seq in sequences:
        ranks = green_ranks(seq, config, cache)
        ms.append(ranks.size)
        gs.append(int(np.count_nonzero(ranks >= red)))
    return np.array(ms), np.array(gs)


# -- experiments ------------------------------------------------------------


def calibrate(
    workload: Workload,
    trials: int = 500,
    seed: int = 0,
    gamma: float = 0.5,
    window: int = 1,
    fprs: Sequence[float] = DEFAULT_FPRS,
    workers: int = 1,
) -> MetricTable:
    """Empirical FPR of each test statistic on unwatermarked text at nominal levels."""
    if trials < 1:
        raise InvalidParams("trials must be >= 1")
    t0 = time.perf_counter()
    key = experiment_key(seed)
    seqs = make_corpus(workload, trials, seed, None, workers=workers, stream="null")
    cfg = DetectorConfig(key, workload.vocab_size, gamma, window)
    ms, gs = green_stats(seqs, cfg)
    g = cfg.gamma_eff
    p_kl = np.array([p_value_kl(m, k, g) for m, k in zip(ms, gs)])
    p_ex = np.array([p_value_exact(m, k, g) for m, k in zip(ms, gs)])
    p_z = np.array([z_test_baseline(m, k, g)[1] for m, k in zip(ms, gs)])
    elapsed = time.perf_counter() - t0
    table = MetricTable("calibrate")
    phis = gs / ms - (1.0 - g)
    for name, pv in (("dipmark", p_kl), ("exact", p_ex), ("z-test", p_z)):
        for q in fprs:
            hits = int(np.count_nonzero(pv <= q))
            table.add(
                MetricRow(
                    f"{name}@{q:g}",
                    fpr=hits / trials,
                    mean_phi=float(phis.mean()),
                    wall_time_s=elapsed,
                    extra={"nominal": q, "false_positives": hits, "trials": trials,
                           "limit_3sigma": q + 3 * binomial_sigma(q, trials)},
                )
            )
    return table


def detectability(
    workload: Workload,
    strategies: Sequence[ReweightStrategy],
    trials: int = 500,
    seed: int = 0,
    gamma: float = 0.5,
    window: int = 1,
    fprs: Sequence[float] = DEFAULT_FPRS,
    workers: int = 1,
) -> MetricTable:
    """FPR/TNR/TPR/FNR at ``z = sqrt(ln(1/p) / 2m)`` (1.073/sqrt(m) and 1.517/sqrt(m))."""
    key = experiment_key(seed)
    cfg = DetectorConfig(key, workload.vocab_size, gamma, window)
    cache = _cipher.CipherCache(key, workload.vocab_size)
    null = make_corpus(workload, trials, seed, None, workers=workers, stream="null")
    m0, g0 = green_stats(null, cfg, cache)
    g = cfg.gamma_eff
    phi0 = g0 / m0 - (1.0 - g)
    table = MetricTable("detectability")
    for strategy in strategies:
        t0 = time.perf_counter()
        marked = make_corpus(workload, trials, seed, strategy, key, window, workers, stream="marked")
        m1, g1 = green_stats(marked, cfg, cache)
        phi1 = g1 / m1 - (1.0 - g)
        elapsed = time.perf_counter() - t0
        for q in fprs:
            z0 = np.array([threshold_for_fpr(int(m), g, q, "approx") for m in m0])
            z1 = np.array([threshold_for_fpr(int(m), g, q, "approx") for m in m1])
            table.add(
                MetricRow(
                    f"{strategy}@{q:g}",
                    fpr=float(np.mean(phi0 > z0)),
                    tpr=float(np.mean(phi1 > z1)),
                    mean_phi=float(phi1.mean()),
                    mean_green_ratio=float((g1 / m1).mean()),
                    wall_time_s=elapsed,
                    extra={"nominal": q, "trials": trials, "null_mean_phi": float(phi0.mean())},
                )
            )
    return table


def resilience(
    workload: Workload,
    strategy: ReweightStrategy,
    epsilons: Sequence[float] = (0.0, 0.1, 0.2, 0.3),
    trials: int = 500,
    seed: int = 0,
    gamma: float = 0.5,
    window: int = 1,
    modes: Sequence[str] = ("substitute",),
    workers: int = 1,
) -> MetricTable:
    """ROC AUC of the green-token ratio, attacked watermarked text vs unwatermarked text.

    With several ``modes`` the attack mode cycles across sequences.
    """
    key = experiment_key(seed)
    cfg = DetectorConfig(key, workload.vocab_size, gamma, window)
    cache = _cipher.CipherCache(key, workload.vocab_size)
    vocab = Vocabulary(workload.vocab_size)
    null = make_corpus(workload, trials, seed, None, workers=workers, stream="null")
    marked = make_corpus(workload, trials, seed, strategy, key, window, workers, stream="marked")
    m0, g0 = green_stats(null, cfg, cache)
    g = cfg.gamma_eff
    neg = g0 / m0 - (1.0 - g)
    attack_seeds = np.random.SeedSequence([seed, 0xA77AC]).generate_state(trials, np.uint64)
    table = MetricTable("resilience")
    for eps in epsilons:
        t0 = time.perf_counter()
        attacked = [
            attack(seq, AttackSpec(modes[i % len(modes)], eps, int(attack_seeds[i])), vocab)
            for i, seq in enumerate(marked)
        ]
        m1, g1 = green_stats(attacked, cfg, cache)
        pos = g1 / m1 - (1.0 - g)
        table.add(
            MetricRow(
                f"eps={eps:g}",
                auc=roc_auc(pos, neg),
                mean_phi=float(pos.mean()),
                mean_green_ratio=float((g1 / m1).mean()),
                wall_time_s=time.perf_counter() - t0,
                extra={"epsilon": eps, "trials": trials, "modes": "+".join(modes)},
            )
        )
    return table


def gamma_sweep(
    workload: Workload,
    strategy: ReweightStrategy,
    gammas: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    trials: int = 200,
    seed: int = 0,
    window: int = 1,
    workers: int = 1,
) -> MetricTable:
    """Mean green-token ratio per separator; one cipher pass serves every separator."""
    if any(not 0.0 < gm < 1.0 for gm in gammas):
        raise InvalidParams("gamma grid must lie inside (0, 1)")
    key = experiment_key(seed)
    marked = make_corpus(workload, trials, seed, strategy, key, window, workers, stream="marked")
    cfg = DetectorConfig(key, workload.vocab_size, 0.5, window)
    cache = _cipher.CipherCache(key, workload.vocab_size)
    rank_lists = [green_ranks(seq, cfg, cache) for seq in marked]
    table = MetricTable("gamma_sweep")
    for gm in gammas:
        red = red_list_size(gm, workload.vocab_size)
        ge = effective_gamma(gm, workload.vocab_size)
        phis = np.array([np.count_nonzero(r >= red) / r.size - (1.0 - ge) for r in rank_lists])
        table.add(
            MetricRow(
                f"gamma={gm:g}",
                mean_phi=float(phis.mean()),
                mean_green_ratio=float(phis.mean() + 1.0 - ge),
                extra={"gamma": gm, "gamma_eff": ge, "phi_sem": float(phis.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0},
            )
        )
    return table


def timing(
    workload: Workload,
    trials: int = 1000,
    seed: int = 0,
    gamma: float = 0.5,
    window: int = 1,
    strategy: Optional[ReweightStrategy] = None,
    workers: int = 1,
) -> MetricTable:
    """Wall time of uncached detection for ``trials`` watermarked sequences and for one.

    Also records how many provider calls detection made (must be zero).
    """
    from .detector import detect
    from .lm import CountingProvider

    table = MetricTable("timing")
    if trials == 0:
        table.add(MetricRow("batch", wall_time_s=0.0, extra={"sequences": 0}))
        return table
    strategy = strategy or ReweightStrategy.dip(0.45)
    key = experiment_key(seed)
    counting = CountingProvider(workload.provider)
    seqs = make_corpus(Workload(counting, workload.prompts), trials, seed, strategy, key, window, workers, stream="marked")
    calls_before = counting.calls
    cfg = DetectorConfig(key, workload.vocab_size, gamma, window, mode="approx")
    t0 = time.perf_counter()
    detect(seqs[0], cfg)
    single = time.perf_counter() - t0
    t0 = time.perf_counter()
    reports = [detect(s, cfg) for s in seqs]
    batch = time.perf_counter() - t0
    calls = counting.calls - calls_before
    tpr = float(np.mean([r.decision for r in reports]))
    table.add(MetricRow("single", wall_time_s=single, extra={"sequences": 1}))
    table.add(MetricRow("batch", tpr=tpr, wall_time_s=batch,
                        extra={"sequences": trials, "provider_calls": calls,
                               "mean_length": float(np.mean([len(s) for s in seqs]))}))
    return table


# -- configuration and outputs ---------------------------------------------


@dataclass
class ExperimentConfig:
    experiment: str
    trials: int = 500
    seed: int = 0
    strategy: str = "dip:alpha=0.45"
    strategies: Optional[list] = None
    gamma: float = 0.5
    window: int = 1
    alpha: float = 0.45
    n: int = 3
    samples: int = 100_000
    epsilons: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    attack_modes: list = field(default_factory=lambda: ["substitute"])
    gammas: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    provider: dict = field(default_factory=lambda: {"type": "default"})
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidParams(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.trials < 1 and self.experiment != "timing":
            raise InvalidParams("trials must be >= 1")

    @classmethod
    def from_json(cls, obj: dict, experiment: Optional[str] = None) -> "ExperimentConfig":
        data = dict(obj)
        if experiment is not None:
            data["experiment"] = experiment
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidParams(f"unknown config fields {sorted(unknown)}")
        return cls(**data)


def build_workload(spec: dict) -> Workload:
    kind = spec.get("type", "default")
    if kind == "default":
        wl = default_workload()
    elif kind == "model":
        model = load_model(spec["path"])
        prompts = [tuple(p) for p in spec.get("prompts", [])]
        wl = Workload(model, prompts)
    else:
        raise InvalidParams(f"unknown provider type {kind!r}")
    if spec.get("top_k"):
        wl = Workload(TopKProvider(wl.provider, int(spec["top_k"])), wl.prompts)
    return wl


def run_experiment(config: ExperimentConfig) -> MetricTable:
    c = config
    if c.experiment == "preserve_exact":
        rng = np.random.default_rng(c.seed)
        table = MetricTable("preserve_exact")
        for i in range(c.trials):
            dist = validate_distribution(rng.dirichlet(np.ones(c.n)))
            table.add(MetricRow(f"dist{i}", extra={"alpha": c.alpha, "n": c.n, "max_abs_error": preserve_exact(c.alpha, dist)}))
        return table
    if c.experiment == "preserve_mc":
        rng = np.random.default_rng(c.seed)
        dist = validate_distribution(rng.dirichlet(np.ones(c.n)))
        tv = preserve_mc(c.alpha, dist, c.samples, c.seed)
        return MetricTable("preserve_mc", [MetricRow("tv", extra={"alpha": c.alpha, "n": c.n, "samples": c.samples, "tv_distance": tv})])
    wl = build_workload(c.provider)
    strategy = ReweightStrategy.parse(c.strategy)
    if c.experiment == "calibrate":
        return calibrate(wl, c.trials, c.seed, c.gamma, c.window, workers=c.workers)
    if c.experiment == "detectability":
        strategies = [ReweightStrategy.parse(s) for s in (c.strategies or [c.strategy])]
        return detectability(wl, strategies, c.trials, c.seed, c.gamma, c.window, workers=c.workers)
    if c.experiment == "resilience":
        return resilience(wl, strategy, c.epsilons, c.trials, c.seed, c.gamma, c.window, c.attack_modes, c.workers)
    if c.experiment == "gamma_sweep":
        return gamma_sweep(wl, strategy, c.gammas, c.trials, c.seed, c.window, c.workers)
    return timing(wl, c.trials, c.seed, c.gamma, c.window, strategy, c.workers)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_outputs(table: MetricTable, config: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".metrics.csv.")
    os.close(fd)
    table.write_csv(Path(tmp))
    os.replace(tmp, out / "metrics.csv")
    _atomic_write(out / "metrics.json", json.dumps(table.to_json(), indent=2))
    manifest = {
        "config": asdict(config),
        "seed": config.seed,
        "code_version": __version__,
        "cipher_version": _cipher.CIPHER_VERSION,
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2))
    return out
