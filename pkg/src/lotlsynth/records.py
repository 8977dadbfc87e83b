"""Labeled command records and their JSONL representation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

BENIGN = 0
MALICIOUS = 1

SCHEMA_VERSION = 1


class DataError(ValueError):
    """Raised for malformed input data (records, telemetry, datasets)."""


@dataclass(frozen=True)
class CommandRecord:
    cmd: str
    label: int
    origin: str = "baseline"
    split: str = "train"

    def __post_init__(self) -> None:
        if not self.cmd.strip():
            raise DataError("command record has an empty command line")
        if self.label not in (BENIGN, MALICIOUS):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")
        if self.origin.startswith("template:") and self.label != MALICIOUS:
            raise DataError(f"template-origin record must be malicious: {self.cmd!r}")
        if self.origin == "baseline" and self.label != BENIGN:
            raise DataError(f"baseline-origin record must be benign: {self.cmd!r}")
        if self.split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {self.split!r}")

    def to_dict(self) -> dict:
        return {"cmd": self.cmd, "label": self.label, "origin": self.origin, "split": self.split}

    @classmethod
    def from_dict(cls, d: dict) -> "CommandRecord":
        try:
            return cls(cmd=d["cmd"], label=int(d["label"]), origin=d["origin"], split=d["split"])
        except KeyError as exc:
            raise DataError(f"record is missing key {exc.args[0]!r}") from None


def dumps_jsonl(records: Iterable[CommandRecord], meta: dict | None = None) -> str:
    """Serialize records to JSONL text.

    When ``meta`` is given it is written as the first line under a
    ``schema_version`` key so readers can tell it apart from records.
    """
    lines = []
    if meta is not None:
        header = {"schema_version": SCHEMA_VERSION, **meta}
        lines.append(json.dumps(header, sort_keys=True, ensure_ascii=False))
    for r in records:
        lines.append(json.dumps(r.to_dict(), ensure_ascii=False))
    return "\n".join(lines) + "\n"


def iter_jsonl(path: str | Path) -> Iterator[CommandRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if "schema_version" in obj:
                continue
            yield CommandRecord.from_dict(obj)


def read_jsonl(path: str | Path) -> list[CommandRecord]:
    return list(iter_jsonl(path))


def read_jsonl_meta(path: str | Path) -> dict:
    """Return the header line of a dataset file, or {} when absent."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first:
        return {}
    obj = json.loads(first)
    return obj if "schema_version" in obj else {}
