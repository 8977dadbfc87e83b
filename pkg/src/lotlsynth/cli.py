"""Command-line driver: ``lotlsynth {synth,train,attack,eval,explain,report}``.

Every subcommand reads one JSON experiment config (``--config`` or the
``LOTLSYNTH_CONFIG`` environment variable) with ``--set key=value``
overrides, and writes artifacts stamped with the config hash.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import attacks, evaluation, explain, features, models, synthesis, textproc
from .corpus import baseline_records, generate_synthetic_baseline, read_audit_log, read_command_lines
from .records import SCHEMA_VERSION, CommandRecord, DataError, dumps_jsonl, read_jsonl, read_jsonl_meta

log = logging.getLogger("lotlsynth")

CONFIG_ENV = "LOTLSYNTH_CONFIG"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4


class ConfigError(ValueError):
    """The experiment config is missing, malformed or inconsistent."""


def _default_attacks() -> list[dict]:
    return [
        {"kind": "shell_escape", "threshold": 1.0},
        {"kind": "benign_injection", "payload_chars": 128},
        {"kind": "hybrid", "attack_param": 1.0},
    ]


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str = "runs/default"
    templates: str | None = None
    placeholders: str | None = None
    baseline: str | None = None
    baseline_format: str = "lines"
    baseline_size: int = 20000
    test_fraction: float = 0.5
    alpha: float = 0.5
    train_ratio: float = 0.7
    delta: int | None = None
    augment: bool = True
    tokenizer: str = "wordpunct"
    bpe_size: int = 4096
    vocab_size: int = 4096
    encoder: str = "onehot"
    minhash_k: int = 64
    max_len: int = 256
    model: str = "gbdt"
    model_params: dict = field(default_factory=dict)
    rho: float = 0.0
    attacks: list = field(default_factory=_default_attacks)
    adversary_baseline: str | None = None
    signatures: str | None = None
    compare_signatures: bool = True
    fpr_targets: list = field(default_factory=lambda: list(evaluation.DEFAULT_FPR_TARGETS))
    explain_top_k: int = 10
    explain_samples: int = 200

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "seed" not in d or not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            raise ConfigError("config must set an integer 'seed'")
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for key in ("templates", "placeholders", "baseline", "adversary_baseline", "signatures"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{key}: file not found: {path}")
        checks = [
            (self.baseline_format in ("lines", "audit"), "baseline_format must be 'lines' or 'audit'"),
            (self.baseline_size >= 2, "baseline_size must be at least 2"),
            (0.0 < self.test_fraction < 1.0, "test_fraction must be in (0, 1)"),
            (0.0 <= self.alpha <= 1.0, "alpha must be in [0, 1]"),
            (0.0 < self.train_ratio <= 1.0, "train_ratio must be in (0, 1]"),
            (self.tokenizer in textproc.MODES, f"tokenizer must be one of {textproc.MODES}"),
            (self.encoder in features.KINDS, f"encoder must be one of {features.KINDS}"),
            (self.model in models.TRAINERS, f"model must be one of {sorted(models.TRAINERS)}"),
            (self.vocab_size >= 3, "vocab_size must be at least 3"),
            (0.0 <= self.rho <= 1.0, "rho must be in [0, 1]"),
            (isinstance(self.model_params, dict), "model_params must be an object"),
            (all(0.0 <= t <= 1.0 for t in self.fpr_targets), "fpr_targets must lie in [0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for a in self.attacks:
            try:
                attacks.AttackConfig(**{k: v for k, v in a.items() if k != "name"}, adversary_baseline=("x",))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid attack config {a}: {exc}") from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return models.config_hash(self.to_dict())


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply ``a.b=value`` overrides; values are parsed as JSON when possible."""
    out = json.loads(json.dumps(raw))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {p} is not an object")
        node[parts[-1]] = _parse_value(value)
    return out


def load_config(path: str | None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    else:
        raw = {}
    return ExperimentConfig.from_dict(apply_overrides(raw, overrides))


# --------------------------------------------------------------------------
# artifact staging
# --------------------------------------------------------------------------

class ArtifactWriter:
    """Stage outputs in temp files and publish them only when the step succeeds."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self._staged: list[tuple[Path, Path]] = []

    def write_text(self, name: str, text: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.out_dir)
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        target = self.out_dir / name
        self._staged.append((Path(tmp), target))
        return target

    def write_json(self, name: str, obj: dict) -> Path:
        return self.write_text(name, json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n")

    def commit(self) -> list[Path]:
        for tmp, target in self._staged:
            os.chmod(tmp, 0o644)
            os.replace(tmp, target)
        done = [t for _, t in self._staged]
        self._staged.clear()
        return done

    def discard(self) -> None:
        for tmp, _ in self._staged:
            tmp.unlink(missing_ok=True)
        self._staged.clear()


@contextmanager
def staged(out_dir: Path) -> Iterator[ArtifactWriter]:
    writer = ArtifactWriter(out_dir)
    try:
        yield writer
    except BaseException:
        writer.discard()
        raise
    for path in writer.commit():
        log.info("wrote %s", path)


def _meta(cfg: ExperimentConfig, kind: str, **extra) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config_hash": cfg.hash(), "artifact": kind, **extra}


# --------------------------------------------------------------------------
# pipeline steps
# --------------------------------------------------------------------------

def _load_baseline(cfg: ExperimentConfig) -> tuple[list[CommandRecord], list[CommandRecord]]:
    if cfg.baseline is None:
        cmds = [r.cmd for r in generate_synthetic_baseline(cfg.baseline_size, seed=cfg.seed)]
    elif cfg.baseline_format == "audit":
        cmds = read_audit_log(cfg.baseline)
    else:
        cmds = read_command_lines(cfg.baseline)
    cmds = list(dict.fromkeys(cmds))
    if len(cmds) < 2:
        raise DataError("baseline needs at least two distinct commands")
    order = np.random.default_rng([cfg.seed, 7]).permutation(len(cmds))
    n_test = max(1, int(round(cfg.test_fraction * len(cmds))))
    test_idx, train_idx = np.sort(order[:n_test]), np.sort(order[n_test:])
    return (baseline_records([cmds[i] for i in train_idx], "train"),
            baseline_records([cmds[i] for i in test_idx], "test"))


def run_synth(cfg: ExperimentConfig, args) -> None:
    registry = synthesis.load_registry(cfg.placeholders) if cfg.placeholders else synthesis.default_registry()
    templates = synthesis.load_templates(cfg.templates, registry)
    train_t, test_t = synthesis.split_templates(templates, cfg.train_ratio, cfg.seed)
    base_train, base_test = _load_baseline(cfg)
    if cfg.augment:
        scfg = synthesis.SynthesisConfig(alpha=cfg.alpha, train_ratio=cfg.train_ratio, seed=cfg.seed,
                                         target_balance_delta=cfg.delta)
        train, test = synthesis.build_dataset(train_t, test_t, base_train, base_test, scfg, registry)
    else:
        train = synthesis.build_default_dataset(train_t, base_train, "train", registry=registry)
        test = synthesis.build_default_dataset(test_t, base_test, "test", registry=registry)
    with staged(Path(cfg.output_dir)) as out:
        for split, recs, tpl in (("train", train, train_t), ("test", test, test_t)):
            meta = _meta(cfg, "dataset", split=split, templates=[t.id for t in tpl],
                         n_benign=sum(r.label == 0 for r in recs), n_malicious=sum(r.label == 1 for r in recs))
            out.write_text(f"dataset_{split}.jsonl", dumps_jsonl(recs, meta))


def _read_dataset(path: Path) -> list[CommandRecord]:
    if not path.is_file():
        raise DataError(f"dataset not found: {path} (run 'synth' first)")
    recs = read_jsonl(path)
    if not recs:
        raise DataError(f"dataset is empty: {path}")
    return recs


@dataclass
class Pipeline:
    """Tokenizer, vocabulary, encoder and model loaded from one artifact."""

    tokenizer: textproc.Tokenizer
    vocabulary: textproc.Vocabulary
    encoder: features.EncoderSpec
    model: models.Model

    def encode(self, records: Sequence[CommandRecord]) -> features.FeatureMatrix:
        return features.encode_batch(self.tokenizer.batch(r.cmd for r in records), self.encoder,
                                     [r.label for r in records])

    def scores(self, records: Sequence[CommandRecord]) -> np.ndarray:
        return models.predict_scores(self.model, self.encode(records).model_input())


def fit_pipeline(cfg: ExperimentConfig, records: Sequence[CommandRecord]) -> Pipeline:
    records = [*records, *models.adversarial_augment(records, cfg.rho, cfg.seed)]
    cmds = [r.cmd for r in records]
    bpe = textproc.train_bpe(cmds, cfg.bpe_size, seed=cfg.seed) if cfg.tokenizer == "bpe" else None
    tok = textproc.Tokenizer(cfg.tokenizer, bpe)
    tokenized = tok.batch(cmds)
    vocab = textproc.build_vocabulary(tokenized, cfg.vocab_size)
    enc = features.fit_encoder(cfg.encoder, tokenized, vocab, cfg.minhash_k, cfg.max_len, cfg.seed)
    X = features.encode_batch(tokenized, enc, [r.label for r in records])
    params = dict(cfg.model_params)
    if cfg.model in ("random_forest", "mlp"):
        params.setdefault("seed", cfg.seed)
    try:
        model = models.train_model(cfg.model, X.model_input(), X.labels, params)
    except TypeError as exc:
        raise ConfigError(f"invalid model_params: {exc}") from None
    except ValueError as exc:
        raise models.TrainingError(str(exc)) from None
    return Pipeline(tok, vocab, enc, model)


def run_train(cfg: ExperimentConfig, args) -> None:
    out_dir = Path(cfg.output_dir)
    records = _read_dataset(Path(args.dataset) if args.dataset else out_dir / "dataset_train.jsonl")
    pipe = fit_pipeline(cfg, records)
    vocab_hash = pipe.vocabulary.hash()
    artifact = {
        **_meta(cfg, "model", vocab_hash=vocab_hash, vocab_path="vocab.json"),
        "tokenizer": pipe.tokenizer.to_dict(),
        "encoder": pipe.encoder.to_dict(),
        "model": models.model_to_dict(pipe.model),
        "training": {"config": cfg.to_dict(), "n_records": len(records), "rho": cfg.rho},
    }
    with staged(out_dir) as out:
        out.write_json("vocab.json", {**_meta(cfg, "vocabulary", vocab_hash=vocab_hash), **pipe.vocabulary.to_dict()})
        out.write_json("model.json", artifact)


def load_pipeline(model_path: Path, vocab_path: Path | None = None) -> Pipeline:
    if not model_path.is_file():
        raise DataError(f"model not found: {model_path} (run 'train' first)")
    art = json.loads(model_path.read_text(encoding="utf-8"))
    if art.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{model_path}: unsupported schema_version {art.get('schema_version')!r}")
    vocab_path = vocab_path or model_path.parent / art["vocab_path"]
    if not vocab_path.is_file():
        raise DataError(f"vocabulary not found: {vocab_path}")
    vocab = textproc.Vocabulary.from_dict(json.loads(vocab_path.read_text(encoding="utf-8")))
    if vocab.hash() != art["vocab_hash"]:
        raise DataError(f"vocabulary hash mismatch: model expects {art['vocab_hash']}, "
                        f"{vocab_path} has {vocab.hash()}")
    try:
        enc = features.EncoderSpec.from_dict(art["encoder"], vocab)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return Pipeline(textproc.Tokenizer.from_dict(art["tokenizer"]), vocab, enc, models.model_from_dict(art["model"]))


def _attack_name(a: dict) -> str:
    return a.get("name") or a["kind"]


def run_attack(cfg: ExperimentConfig, args) -> None:
    out_dir = Path(cfg.output_dir)
    records = _read_dataset(Path(args.dataset) if args.dataset else out_dir / "dataset_test.jsonl")
    adv = attacks.load_adversary_baseline(cfg.adversary_baseline)
    names = [_attack_name(a) for a in cfg.attacks]
    if len(set(names)) != len(names):
        raise ConfigError("attack names must be unique; set 'name' on repeated kinds")
    with staged(out_dir) as out:
        for spec, name in zip(cfg.attacks, names):
            acfg = attacks.AttackConfig(**{k: v for k, v in spec.items() if k != "name"},
                                        adversary_baseline=tuple(adv), seed=spec.get("seed", cfg.seed))
            attacked = attacks.attack_records(records, acfg)
            out.write_text(f"attack_{name}.jsonl", dumps_jsonl(attacked, _meta(cfg, "dataset", attack=acfg.to_dict())))


def _default_eval_inputs(out_dir: Path) -> list[Path]:
    return [out_dir / "dataset_test.jsonl", *sorted(out_dir.glob("attack_*.jsonl"))]


def run_eval(cfg: ExperimentConfig, args) -> None:
    out_dir = Path(cfg.output_dir)
    pipe = load_pipeline(Path(args.model) if args.model else out_dir / "model.json",
                         Path(args.vocab) if args.vocab else None)
    inputs = [Path(p) for p in args.dataset] if args.dataset else _default_eval_inputs(out_dir)
    rules = models.load_signatures(cfg.signatures) if cfg.compare_signatures else None
    with staged(out_dir) as out:
        for path in inputs:
            records = _read_dataset(path)
            meta = read_jsonl_meta(path)
            if "vocab_hash" in meta and meta["vocab_hash"] != pipe.vocabulary.hash():
                raise DataError(f"vocabulary hash mismatch: {path} was encoded with {meta['vocab_hash']}, "
                                f"model uses {pipe.vocabulary.hash()}")
            labels = [r.label for r in records]
            scores = pipe.scores(records)
            rep = evaluation.summary_metrics(scores, labels, cfg.fpr_targets)
            rep.model, rep.dataset = cfg.model, path.name
            rep.diagnostics = evaluation.distribution_report(records, pipe.tokenizer)
            body = rep.to_dict()
            body["recall_at_0.5"] = evaluation.recall_at(scores, labels)
            stem = path.stem
            out.write_json(f"report_{stem}.json", {**_meta(cfg, "report", vocab_hash=pipe.vocabulary.hash()), **body})
            curve = evaluation.roc_curve(scores, labels)
            out.write_text(f"roc_{stem}.csv", evaluation.roc_csv(curve, {"schema_version": SCHEMA_VERSION,
                                                                          "config_hash": cfg.hash()}))
            if rules is not None:
                sig_scores = rules.scores([r.cmd for r in records])
                sig = evaluation.summary_metrics(sig_scores, labels, cfg.fpr_targets)
                sig.model, sig.dataset = "signatures", path.name
                out.write_json(f"report_{stem}__signatures.json",
                               {**_meta(cfg, "report"), **sig.to_dict(),
                                "recall_at_0.5": evaluation.recall_at(sig_scores, labels)})


def run_explain(cfg: ExperimentConfig, args) -> None:
    out_dir = Path(cfg.output_dir)
    pipe = load_pipeline(Path(args.model) if args.model else out_dir / "model.json",
                         Path(args.vocab) if args.vocab else None)
    path = Path(args.dataset[0]) if args.dataset else out_dir / "dataset_test.jsonl"
    records = _read_dataset(path)
    doc = _meta(cfg, "attribution", vocab_hash=pipe.vocabulary.hash(), dataset=path.name)
    doc["attributions"] = {}
    for label, name in ((1, "malicious"), (0, "benign")):
        sample = [r for r in records if r.label == label][: cfg.explain_samples]
        attrs = explain.occlusion_attribution(pipe.model, pipe.encoder, sample, cfg.explain_top_k, pipe.tokenizer)
        doc["attributions"][name] = [a.to_dict() for a in attrs]
    if isinstance(pipe.model, (models.GbdtModel, models.RandomForestModel)):
        named = explain.name_features(explain.tree_gain_importance(pipe.model), pipe.vocabulary)
        ranked = sorted(named.items(), key=lambda kv: (-kv[1], kv[0]))[: cfg.explain_top_k]
        doc["gain_importance"] = [{"token": t, "value": v} for t, v in ranked]
    with staged(out_dir) as out:
        out.write_json(f"explain_{path.stem}.json", doc)


_TABLE_COLUMNS = ("dataset", "model", "auc", "f1", "accuracy")


def run_report(cfg: ExperimentConfig, args) -> None:
    out_dir = Path(cfg.output_dir)
    inputs = [Path(p) for p in args.inputs] if args.inputs else sorted(out_dir.glob("report_*.json"))
    if not inputs:
        raise DataError(f"no reports to merge in {out_dir} (run 'eval' first)")
    rows = []
    for p in inputs:
        if not p.is_file():
            raise DataError(f"report not found: {p}")
        rep = json.loads(p.read_text(encoding="utf-8"))
        row = {k: rep.get(k) for k in _TABLE_COLUMNS}
        row.update({f"tpr@{k}": v for k, v in sorted(rep.get("tpr_at_fpr", {}).items())})
        row["source"] = str(p)
        row["source_config_hash"] = rep.get("config_hash")
        rows.append(row)
    columns = list(dict.fromkeys(k for r in rows for k in r if k not in ("source", "source_config_hash")))
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for r in rows:
        cells = [f"{r[c]:.6f}" if isinstance(r.get(c), float) else str(r.get(c, "")) for c in columns]
        lines.append("| " + " | ".join(cells) + " |")
    with staged(out_dir) as out:
        out.write_json("comparison.json", {**_meta(cfg, "comparison"), "columns": columns, "rows": rows})
        out.write_text("comparison.md", f"<!-- schema_version={SCHEMA_VERSION} config_hash={cfg.hash()} -->\n"
                       + "\n".join(lines) + "\n")


COMMANDS = {"synth": run_synth, "train": run_train, "attack": run_attack, "eval": run_eval,
            "explain": run_explain, "report": run_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lotlsynth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help=f"experiment config JSON (default: ${CONFIG_ENV})")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key; VALUE is parsed as JSON when possible")
        if name in ("train", "attack"):
            p.add_argument("--dataset", help="input dataset JSONL")
        if name in ("eval", "explain"):
            p.add_argument("--dataset", action="append", help="dataset JSONL to score (repeatable)")
            p.add_argument("--model", help="model artifact (default: <output_dir>/model.json)")
            p.add_argument("--vocab", help="vocabulary artifact (default: the one named by the model)")
        if name == "report":
            p.add_argument("--inputs", nargs="*", help="report JSON files (default: <output_dir>/report_*.json)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except models.TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
