"""Command-line front end.

Subcommands: ``generate``, ``detect``, ``certify``, ``attack``, ``bench`` and
``train-model``. Results go to stdout or ``--out``; diagnostics go to stderr.
Exit status is 0 on success, 1 on usage or validation errors and 2 on
runtime failures. Output files are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import bench as _bench
from .cipher import CIPHER_VERSION, CipherCache
from .core import DipmarkError, OutOfVocab, SecretKey, Vocabulary, WatermarkParams
from .detector import DetectorConfig, detect
from .generator import GenerationConfig, generate
from .lm import ProviderError, default_provider, load_corpus, load_model, ngram_train, save_model
from .reweight import ReweightStrategy
from .robustness import AttackSpec, attack, certified_radius, certified_radius_fixed_length


class UsageError(Exception):
    """Raised instead of exiting when argument parsing fails."""


class ParseError(DipmarkError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- input / output -------------------------------------------------------


def parse_token_line(text: str, line: int) -> Optional[list[int]]:
    """Tokens on one input line, or None for a blank line."""
    text = text.strip()
    if not text:
        return None
    if text.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line) from exc
        toks = obj.get("tokens") if isinstance(obj, dict) else None
        if not isinstance(toks, list) or not all(
            isinstance(t, int) and not isinstance(t, bool) for t in toks
        ):
            raise ParseError("expected an object with an integer list under 'tokens'", line)
        return toks
    try:
        return [int(t) for t in text.split()]
    except ValueError as exc:
        raise ParseError(f"non-integer token in {text!r}", line) from exc


def read_tokens(path, vocab_size: Optional[int] = None) -> list[list[int]]:
    """Read JSONL ``{"tokens": [...]}`` lines or whitespace-separated integer lines."""
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            toks = parse_token_line(raw, lineno)
            if toks is None:
                continue
            for t in toks:
                if t < 0 or (vocab_size is not None and t >= vocab_size):
                    raise OutOfVocab(f"line {lineno}: token id {t} outside vocabulary of size {vocab_size}")
            seqs.append(toks)
    return seqs


def write_atomic(path: Optional[str], text: str) -> None:
    """Write to ``path`` via temp file + rename, or to stdout when path is None or '-'."""
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _records_text(records: list[dict], fmt: str) -> str:
    if fmt == "json":
        return "".join(json.dumps(r) + "\n" for r in records)
    if not records:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(records[0]), lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def _parse_prompt(value: Optional[str]) -> tuple[int, ...]:
    if not value:
        return ()
    if os.path.isfile(value):
        seqs = read_tokens(value)
        return tuple(seqs[0]) if seqs else ()
    toks = parse_token_line(value.replace(",", " "), 1)
    return tuple(toks or ())


def _provider(model_path: Optional[str]):
    return load_model(model_path) if model_path else default_provider()


def _vocab_size(args) -> int:
    if getattr(args, "vocab_size", None):
        return args.vocab_size
    return _provider(getattr(args, "model", None)).vocab_size


def _key(args) -> SecretKey:
    if not args.key:
        args.parser.error("the following arguments are required: --key")
    return SecretKey.from_hex(args.key)


# -- subcommands ----------------------------------------------------------


def cmd_generate(args) -> int:
    key = _key(args)
    provider = _provider(args.model)
    strategy = ReweightStrategy.parse(args.strategy or f"dip:alpha={args.alpha}")
    params = WatermarkParams(alpha=args.alpha, gamma=args.gamma, window=args.window)
    prompt = _parse_prompt(args.prompt_ids)
    cache = CipherCache(key, provider.vocab_size)
    root = np.random.SeedSequence(args.seed)
    lines = []
    for child in root.spawn(args.count):
        cfg = GenerationConfig(
            key, args.len, strategy, params, prompt, int(child.generate_state(1, np.uint64)[0])
        )
        trace = generate(provider, cfg, cache)
        obj = {"tokens": trace.tokens}
        if prompt:
            obj["prompt"] = list(prompt)
        if args.trace:
            obj["trace"] = [r.to_json() for r in trace.step_records]
        lines.append(json.dumps(obj) + "\n")
    write_atomic(args.out, "".join(lines))
    return 0


def _detector_config(args, vocab_size: int) -> DetectorConfig:
    return DetectorConfig(
        key=_key(args),
        vocab_size=vocab_size,
        gamma=args.gamma,
        window=args.window,
        fpr=args.fpr,
        mode=args.mode,
        z=args.z,
    )


def cmd_detect(args) -> int:
    vocab = _vocab_size(args)
    config = _detector_config(args, vocab)
    seqs = read_tokens(args.input, vocab)
    cache = CipherCache(config.key, vocab)
    reports = [detect(s, config, cache).to_json() for s in seqs]
    write_atomic(args.out, _records_text(reports, args.format))
    return 0


def cmd_certify(args) -> int:
    if (args.phi is None) == (args.report is None):
        args.parser.error("exactly one of --phi or --report is required")
    if args.phi is not None:
        phis = [args.phi]
    else:
        phis = []
        with open(args.report, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    phis.append(float(json.loads(raw)["phi"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ParseError("expected a detection report with a 'phi' field", lineno) from exc
    out = []
    for phi in phis:
        if args.fixed_length:
            r = certified_radius_fixed_length(phi, args.z, args.window)
        else:
            r = certified_radius(phi, args.z, args.gamma, args.window)
        rec = {"phi": phi, "z": args.z, "epsilon0": r.epsilon0, "basis": r.basis}
        if r.caveat:
            rec["caveat"] = r.caveat
        out.append(rec)
    write_atomic(args.out, _records_text(out, args.format))
    return 0


def cmd_attack(args) -> int:
    vocab = Vocabulary(_vocab_size(args))
    seqs = read_tokens(args.input, vocab.size)
    root = np.random.SeedSequence(args.seed)
    lines = []
    for seq, child in zip(seqs, root.spawn(len(seqs))):
        spec = AttackSpec(args.mode, args.eps, int(child.generate_state(1, np.uint64)[0]))
        lines.append(json.dumps({"tokens": attack(seq, spec, vocab)}) + "\n")
    write_atomic(args.out, "".join(lines))
    return 0


def cmd_bench(args) -> int:
    obj = {}
    if args.config:
        obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed_given:
        obj["seed"] = args.seed
    config = _bench.ExperimentConfig.from_json(obj, args.experiment)
    table = _bench.run_experiment(config)
    out = _bench.write_outputs(table, config, args.out)
    print(table)
    print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_train_model(args) -> int:
    seqs, vocab = load_corpus(args.corpus)
    model = ngram_train(seqs, args.order, args.lam, vocab)
    fd, tmp = tempfile.mkstemp(dir=Path(args.out).parent or ".", prefix=".model.")
    os.close(fd)
    try:
        save_model(model, tmp)
        os.replace(tmp, args.out)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    print(f"vocabulary {vocab.size}, contexts {len(model.to_json()['counts'])}", file=sys.stderr)
    return 0


# -- parser ---------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--key", help="secret key as hex (at least 16 bytes)")
    p.add_argument("--gamma", type=float, default=0.5, help="red-list fraction (default 0.5)")
    p.add_argument("--alpha", type=float, default=0.45, help="reweight quantile (default 0.45)")
    p.add_argument("--window", type=int, default=1, help="texture-key length a (default 1)")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dipmark", description="Distribution-preserving watermark toolkit.")
    parser.add_argument("--version", action="version", version=CIPHER_VERSION)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    g = sub.add_parser("generate", parents=[common], help="sample watermarked token sequences")
    g.add_argument("--model", help="model JSON file (default: bundled n-gram)")
    g.add_argument("--strategy", help='e.g. "dip:alpha=0.45", "soft:gamma=0.5,delta=1.5"')
    g.add_argument("--len", type=int, default=260)
    g.add_argument("--count", type=int, default=1, help="number of sequences")
    g.add_argument("--prompt-ids", help="prompt token ids, inline or a file")
    g.add_argument("--trace", action="store_true", help="include per-step audit records")
    g.add_argument("--out")
    g.set_defaults(parser=g, func=cmd_generate)

    d = sub.add_parser("detect", parents=[common], help="score token sequences")
    d.add_argument("--input", required=True)
    d.add_argument("--out")
    d.add_argument("--fpr", type=float, default=0.01)
    d.add_argument("--mode", choices=("exact", "kl", "approx"), default="exact")
    d.add_argument("--z", type=float, default=None, help="fixed threshold; overrides --fpr")
    d.add_argument("--model", help="model file supplying the vocabulary size")
    d.add_argument("--vocab-size", type=int)
    d.set_defaults(parser=d, func=cmd_detect)

    c = sub.add_parser("certify", parents=[common], help="certified edit radius")
    c.add_argument("--phi", type=float)
    c.add_argument("--report", help="detection reports (JSONL)")
    c.add_argument("--z", type=float, required=True)
    c.add_argument("--fixed-length", action="store_true", help="substitution-only radius")
    c.add_argument("--out")
    c.set_defaults(parser=c, func=cmd_certify)

    a = sub.add_parser("attack", parents=[common], help="apply random edits")
    a.add_argument("--eps", type=float, required=True)
    a.add_argument("--mode", choices=("substitute", "insert", "delete"), default="substitute")
    a.add_argument("--input", required=True)
    a.add_argument("--out")
    a.add_argument("--model")
    a.add_argument("--vocab-size", type=int)
    a.set_defaults(parser=a, func=cmd_attack)

    b = sub.add_parser("bench", parents=[common], help="run a benchmark experiment")
    b.add_argument("experiment", choices=_bench.EXPERIMENTS)
    b.add_argument("--config", help="experiment config JSON")
    b.add_argument("--out", required=True, help="output directory")
    b.set_defaults(parser=b, func=cmd_bench)

    t = sub.add_parser("train-model", help="fit an n-gram model on text files")
    t.add_argument("corpus", nargs="+")
    t.add_argument("--order", type=int, default=3)
    t.add_argument("--lambda", dest="lam", type=float, default=0.1)
    t.add_argument("--out", required=True)
    t.set_defaults(parser=t, func=cmd_train_model)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if hasattr(args, "seed"):
            args.seed_given = args.seed is not None
            if args.seed is None:
                args.seed = 0
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ProviderError as exc:
        print(f"dipmark: runtime error: {exc}", file=sys.stderr)
        return 2
    except (DipmarkError, ValueError, KeyError) as exc:
        print(f"dipmark: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"dipmark: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
