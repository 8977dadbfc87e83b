from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
import stat

import pytest

from lotlsynth.cli import (
    CONFIG_ENV,
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_OK,
    ConfigError,
    apply_overrides,
    load_config,
    main,
    staged,
)
from lotlsynth.records import read_jsonl, read_jsonl_meta

STEPS = ("synth", "train", "attack", "eval", "explain", "report")


def write_config(tmp_path, **extra):
    cfg = {"seed": 3, "output_dir": str(tmp_path / "run"), "baseline_size": 1500,
           "model_params": {"n_estimators": 15}, "explain_samples": 20, **extra}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def run_all(cfg_path, steps=STEPS):
    for step in steps:
        assert main([step, "--config", str(cfg_path)]) == EXIT_OK, step


def digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_full_pipeline_desk_scale(tmp_path):
    cfg = write_config(tmp_path, baseline_size=10_000, model_params={})
    run_all(cfg)
    out = tmp_path / "run"
    names = {p.name for p in out.iterdir()}
    assert {"dataset_train.jsonl", "dataset_test.jsonl", "model.json", "vocab.json", "comparison.json",
            "comparison.md", "explain_dataset_test.json"} <= names
    assert {"attack_shell_escape.jsonl", "attack_benign_injection.jsonl", "attack_hybrid.jsonl"} <= names
    assert {"report_dataset_test.json", "roc_dataset_test.csv", "report_dataset_test__signatures.json"} <= names
    assert not [n for n in names if n.startswith(".")]

    chash = json.loads((out / "model.json").read_text())["config_hash"]
    for p in out.glob("*.json"):
        doc = json.loads(p.read_text())
        assert doc["schema_version"] == 1 and doc["config_hash"] == chash, p.name
    for p in out.glob("*.jsonl"):
        meta = read_jsonl_meta(p)
        assert meta["schema_version"] == 1 and meta["config_hash"] == chash
        assert read_jsonl(p)
    report = json.loads((out / "report_dataset_test.json").read_text())
    for key in ("auc", "f1", "accuracy", "tpr_at_fpr", "confusion", "diagnostics"):
        assert key in report
    assert set(report["tpr_at_fpr"]) == {"1e-4", "1e-5", "1e-6"}
    assert set(report["diagnostics"]["venn"]) == {"benign_only", "malicious_only", "shared"}
    with open(out / "roc_dataset_test.csv") as fh:
        assert fh.readline().startswith("# ")
        rows = list(csv.DictReader(fh))
    assert rows[0]["tpr"] == "0.0" and float(rows[-1]["fpr"]) == 1.0
    explain = json.loads((out / "explain_dataset_test.json").read_text())
    assert explain["attributions"]["malicious"] and explain["gain_importance"]
    assert stat.S_IMODE(os.stat(out / "model.json").st_mode) == 0o644


def test_rerun_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    run_all(cfg)
    first = digest(tmp_path / "run")
    shutil.rmtree(tmp_path / "run")
    run_all(cfg)
    assert digest(tmp_path / "run") == first


def test_synth_twice_identical(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["synth", "--config", str(cfg)]) == EXIT_OK
    before = digest(tmp_path / "run")
    assert main(["synth", "--config", str(cfg)]) == EXIT_OK
    assert digest(tmp_path / "run") == before


def test_vocab_mismatch_refused(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run_all(cfg, ("synth", "train"))
    other = tmp_path / "other"
    other.mkdir()
    other_cfg = write_config(other, seed=4)
    run_all(other_cfg, ("synth", "train"))
    rc = main(["eval", "--config", str(cfg), "--vocab", str(other / "run" / "vocab.json")])
    assert rc == EXIT_DATA
    assert "vocabulary hash mismatch" in capsys.readouterr().err
    assert not list((tmp_path / "run").glob("report_*"))


def test_dataset_vocab_hash_guard(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run_all(cfg, ("synth", "train"))
    ds = tmp_path / "run" / "dataset_test.jsonl"
    lines = ds.read_text().splitlines()
    meta = json.loads(lines[0])
    meta["vocab_hash"] = "0" * 16
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join([json.dumps(meta), *lines[1:]]) + "\n")
    assert main(["eval", "--config", str(cfg), "--dataset", str(bad)]) == EXIT_DATA
    assert "mismatch" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    assert main(["synth"]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 1, "bogus": 2}))
    assert main(["synth", "--config", str(bad)]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err
    bad.write_text(json.dumps({"seed": 1, "templates": str(tmp_path / "missing.json")}))
    assert main(["synth", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text("{not json")
    assert main(["synth", "--config", str(bad)]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_missing_inputs_are_data_errors(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg)]) == EXIT_DATA
    assert main(["eval", "--config", str(cfg)]) == EXIT_DATA
    assert main(["report", "--config", str(cfg)]) == EXIT_DATA


def test_env_config_and_overrides(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    loaded = load_config(None, ["model_params.n_estimators=4", "encoder=tfidf", "attacks=[]"])
    assert loaded.model_params == {"n_estimators": 4}
    assert loaded.encoder == "tfidf" and loaded.attacks == []
    assert apply_overrides({"a": {"b": 1}}, ["a.c=x"]) == {"a": {"b": 1, "c": "x"}}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ConfigError):
        load_config(None, ["seed=true"])


def test_config_hash_changes_with_config(tmp_path):
    cfg = write_config(tmp_path)
    assert load_config(str(cfg)).hash() == load_config(str(cfg)).hash()
    assert load_config(str(cfg), ["alpha=0.7"]).hash() != load_config(str(cfg)).hash()


def test_partial_outputs_removed(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(RuntimeError):
        with staged(out) as w:
            w.write_text("a.txt", "x")
            raise RuntimeError("boom")
    assert list(out.iterdir()) == []


def test_failed_eval_leaves_no_partial_reports(tmp_path):
    cfg = write_config(tmp_path)
    run_all(cfg, ("synth", "train"))
    missing = tmp_path / "nope.jsonl"
    rc = main(["eval", "--config", str(cfg), "--dataset", str(tmp_path / "run" / "dataset_test.jsonl"),
               "--dataset", str(missing)])
    assert rc == EXIT_DATA
    assert not list((tmp_path / "run").glob("report_*")) and not list((tmp_path / "run").glob("roc_*"))


def test_non_augmented_and_alternate_models(tmp_path):
    for i, extra in enumerate([{"augment": False}, {"model": "random_forest", "model_params": {"n_estimators": 5}},
                               {"model": "mlp", "model_params": {"epochs": 2}, "encoder": "tfidf"},
                               {"encoder": "minhash", "tokenizer": "bpe", "bpe_size": 300},
                               {"encoder": "token_ids", "tokenizer": "whitespace", "max_len": 32}]):
        d = tmp_path / str(i)
        d.mkdir()
        run_all(write_config(d, **extra), ("synth", "train", "eval"))
        assert (d / "run" / "report_dataset_test.json").is_file()
