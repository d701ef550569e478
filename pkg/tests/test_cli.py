import json

import pytest

from dipmark.cipher import CIPHER_VERSION
from dipmark.cli import ParseError, read_tokens, run
from dipmark.core import OutOfVocab, SecretKey
from dipmark.detector import step_digests

KEY = "000102030405060708090a0b0c0d0e0f"


def test_read_tokens(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text('3 1 4 1 5\n\n{"tokens":[0,1]}\n')
    assert read_tokens(p) == [[3, 1, 4, 1, 5], [0, 1]]
    p.write_text("3 x 4\n")
    with pytest.raises(ParseError) as err:
        read_tokens(p)
    assert err.value.line == 1
    p.write_text("1 2\n9 2\n")
    with pytest.raises(OutOfVocab, match="9"):
        read_tokens(p, vocab_size=5)
    p.write_text('{"tokens": [1, "a"]}\n')
    with pytest.raises(ParseError):
        read_tokens(p)


def test_version(capsys):
    with pytest.raises(SystemExit):
        raise SystemExit(run(["--version"]))
    assert CIPHER_VERSION in capsys.readouterr().out


def test_generate_detect_roundtrip(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    args = ["generate", "--key", KEY, "--len", "80", "--count", "3", "--seed", "5",
            "--prompt-ids", "0,1", "--trace", "--out", str(out)]
    assert run(args) == 0
    first = out.read_bytes()
    assert run(args) == 0
    assert out.read_bytes() == first
    records = [json.loads(line) for line in first.decode().splitlines()]
    seqs = read_tokens(out)
    assert seqs == [r["tokens"] for r in records]
    key = SecretKey.from_hex(KEY)
    for rec in records:
        digests = step_digests(rec["tokens"], key, 1, prefix=rec["prompt"][-1:])
        for step, dig in zip(rec["trace"], digests):
            if not step["repeated"]:
                assert step["cipher_digest"] == dig
    reports = tmp_path / "r.jsonl"
    assert run(["detect", "--key", KEY, "--input", str(out), "--out", str(reports)]) == 0
    rows = [json.loads(line) for line in reports.read_text().splitlines()]
    assert len(rows) == 3 and all(r["decision"] for r in rows)
    assert run(["certify", "--report", str(reports), "--z", "0.1"]) == 0
    certs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert all(c["epsilon0"] > 0 for c in certs)


def test_detect_csv(tmp_path, capsys):
    p = tmp_path / "t.txt"
    p.write_text("1 2 3 4 5 6\n")
    assert run(["detect", "--key", KEY, "--input", str(p), "--format", "csv", "--mode", "kl"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("scored,green_count,phi")
    assert len(lines) == 2


def test_exit_codes(tmp_path, capsys):
    p = tmp_path / "t.txt"
    p.write_text("1 2 3\n")
    assert run(["detect", "--input", str(p)]) == 1
    assert "usage" in capsys.readouterr().err
    assert run(["detect", "--key", "abcd", "--input", str(p)]) == 1
    p.write_text("3 x 4\n")
    assert run(["detect", "--key", KEY, "--input", str(p)]) == 1
    assert "line 1" in capsys.readouterr().err
    assert run(["detect", "--key", KEY, "--input", str(tmp_path / "missing")]) == 2
    assert run(["certify", "--z", "0.1"]) == 1
    assert run(["frobnicate"]) == 1
    assert run([]) == 1


def test_no_partial_output_on_error(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("1 2 3\n4 99999\n")
    out = tmp_path / "r.jsonl"
    assert run(["detect", "--key", KEY, "--input", str(p), "--out", str(out)]) == 1
    assert not out.exists()


def test_certify_example(capsys):
    assert run(["certify", "--phi", "0.2", "--z", "0.1", "--gamma", "0.5", "--window", "1"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert round(rec["epsilon0"], 6) == 0.038462
    assert run(["certify", "--phi", "0.2", "--z", "0.1", "--fixed-length"]) == 0
    assert "caveat" in json.loads(capsys.readouterr().out)


def test_attack(tmp_path, capsys):
    p = tmp_path / "t.txt"
    p.write_text(" ".join(str(i) for i in range(100)) + "\n")
    assert run(["attack", "--eps", "0.2", "--mode", "delete", "--seed", "3", "--input", str(p)]) == 0
    toks = json.loads(capsys.readouterr().out)["tokens"]
    assert len(toks) == 80


def test_train_and_bench(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("the cat sat on the mat\n\nthe dog sat on the log\n")
    model = tmp_path / "m.json"
    assert run(["train-model", str(corpus), "--order", "2", "--out", str(model)]) == 0
    out = tmp_path / "g.jsonl"
    assert run(["generate", "--key", KEY, "--model", str(model), "--len", "10", "--out", str(out)]) == 0
    assert all(t < 7 for t in read_tokens(out)[0])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trials": 2, "n": 3}))
    assert run(["bench", "preserve_exact", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "9"]) == 0
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["seed"] == 9
