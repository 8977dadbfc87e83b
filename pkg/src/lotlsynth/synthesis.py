"""Template expansion and balanced dataset construction.

Each placeholder value is drawn either from a curated pool (probability
``alpha``) or from candidates extracted out of the legitimate baseline, so
that generated attacks reuse the addresses, ports and paths of the defended
environment.
"""

from __future__ import annotations

import json
import logging
import math
import re
import string
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .records import BENIGN, MALICIOUS, CommandRecord

log = logging.getLogger(__name__)

MAX_DUPLICATE_ATTEMPTS = 1000

# Example values of the placeholder table; used for "default variant" datasets.
DEFAULT_BINDINGS = {
    "SHELL": "/bin/bash",
    "PROTO_TYPE": "tcp",
    "IP_A": "10.1.1.2",
    "PORT_NR": "4444",
    "FD_NR": "3",
    "FILE_P": "/tmp/foo",
    "VAR_NAME": "host",
    "VAR_NAME_1": "host",
    "VAR_NAME_2": "port",
}


class UnboundPlaceholderError(KeyError):
    pass


# --------------------------------------------------------------------------
# validators
# --------------------------------------------------------------------------

_RESERVED_IDENTIFIERS = frozenset({
    "PATH", "IFS", "HOME", "PWD", "OLDPWD", "REPLY", "UID", "EUID", "PPID", "RANDOM",
    "SHELL", "PS1", "PS2", "PS4", "BASH", "LINENO", "SECONDS", "_",
})


def _is_ipv4(v: str) -> bool:
    parts = v.split(".")
    if len(parts) != 4:
        return False
    for p in parts:
        if not p.isdigit() or len(p) > 3 or (len(p) > 1 and p[0] == "0") or int(p) > 255:
            return False
    return True


def _is_port(v: str) -> bool:
    return bool(re.fullmatch(r"[1-9]\d{0,4}", v)) and int(v) <= 65535


VALIDATORS: dict[str, Callable[[str], bool]] = {
    "shell": lambda v: bool(re.fullmatch(r"(?:/usr)?(?:/bin/)?(?:ba|z|da|k)?sh", v)),
    "proto": lambda v: v in ("tcp", "udp"),
    "ipv4": _is_ipv4,
    "port": _is_port,
    "fd": lambda v: bool(re.fullmatch(r"[3-9]", v)),
    "path": lambda v: bool(re.fullmatch(r"/(?:tmp|var/tmp|dev/shm)(?:/[\w\-][\w.\-]*)+", v)),
    "identifier": lambda v: bool(re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]{0,15}", v))
    and v not in _RESERVED_IDENTIFIERS,
}

_LOWER = string.ascii_lowercase


def _random_identifier(rng: np.random.Generator, min_len: int, max_len: int) -> str:
    n = int(rng.integers(min_len, max_len + 1))
    chars = [_LOWER[int(rng.integers(26))]]
    tail = _LOWER + string.digits + "_"
    chars += [tail[int(rng.integers(len(tail)))] for _ in range(n - 1)]
    return "".join(chars)


def _random_ipv4(rng: np.random.Generator) -> str:
    kind = int(rng.integers(4))
    o = rng.integers(0, 256, size=4)
    if kind == 0:
        return f"10.{o[1]}.{o[2]}.{max(1, o[3])}"
    if kind == 1:
        return f"192.168.{o[2]}.{max(1, o[3])}"
    if kind == 2:
        return f"172.{16 + int(o[1]) % 16}.{o[2]}.{max(1, o[3])}"
    first = int(rng.integers(1, 224))
    while first in (10, 127, 172, 192):
        first = int(rng.integers(1, 224))
    return f"{first}.{o[1]}.{o[2]}.{max(1, o[3])}"


# --------------------------------------------------------------------------
# placeholder registry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PlaceholderSpec:
    name: str
    curated_pool: tuple[str, ...]
    extraction_pattern: str
    validator: str
    generator: Mapping | None = None

    def __post_init__(self) -> None:
        if not self.curated_pool:
            raise ValueError(f"{self.name}: curated pool is empty")
        if self.validator not in VALIDATORS:
            raise ValueError(f"{self.name}: unknown validator {self.validator!r}")
        bad = [v for v in self.curated_pool if not self.is_valid(v)]
        if bad:
            raise ValueError(f"{self.name}: curated values fail validation: {bad}")

    @property
    def regex(self) -> re.Pattern:
        return _compile(self.extraction_pattern)

    def is_valid(self, value: str) -> bool:
        return VALIDATORS[self.validator](value)

    def draw_curated(self, rng: np.random.Generator) -> str:
        gen = self.generator
        if gen and rng.random() < gen.get("probability", 0.5):
            for _ in range(100):
                value = self._generate(gen, rng)
                if self.is_valid(value):
                    return value
        return self.curated_pool[int(rng.integers(len(self.curated_pool)))]

    def _generate(self, gen: Mapping, rng: np.random.Generator) -> str:
        kind = gen["kind"]
        if kind == "int_range":
            return str(int(rng.integers(gen["low"], gen["high"] + 1)))
        if kind == "ipv4":
            return _random_ipv4(rng)
        if kind == "identifier":
            return _random_identifier(rng, gen.get("min_len", 1), gen.get("max_len", 8))
        if kind == "tmp_path":
            return "/tmp/" + _random_identifier(rng, 1, 8)
        raise ValueError(f"{self.name}: unknown generator kind {kind!r}")

    def extract(self, cmd: str) -> list[str]:
        out = []
        for m in self.regex.finditer(cmd):
            value = m.group(1) if m.groups() else m.group(0)
            if value is not None and self.is_valid(value):
                out.append(value)
        return out


@lru_cache(maxsize=None)
def _compile(pattern: str) -> re.Pattern:
    return re.compile(pattern)


@dataclass(frozen=True)
class PlaceholderRegistry:
    specs: Mapping[str, PlaceholderSpec]
    # names that must receive pairwise distinct values within one template
    groups: tuple[tuple[str, ...], ...] = ()

    @property
    def names(self) -> list[str]:
        return sorted(self.specs, key=lambda n: (-len(n), n))

    @property
    def pattern(self) -> re.Pattern:
        return _compile("|".join(re.escape(n) for n in self.names))

    def __getitem__(self, name: str) -> PlaceholderSpec:
        return self.specs[name]

    def __contains__(self, name: str) -> bool:
        return name in self.specs

    def find(self, text: str) -> list[str]:
        return sorted(set(self.pattern.findall(text)))


def load_registry(path: str | Path | None = None) -> PlaceholderRegistry:
    if path is None:
        text = resources.files("lotlsynth").joinpath("data/placeholders.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    doc = json.loads(text)
    specs: dict[str, PlaceholderSpec] = {}
    groups = []
    for entry in doc["placeholders"]:
        names = [entry["name"], *entry.get("aliases", [])]
        for name in names:
            specs[name] = PlaceholderSpec(
                name=name,
                curated_pool=tuple(entry["pool"]),
                extraction_pattern=entry["extraction_pattern"],
                validator=entry["validator"],
                generator=entry.get("generator"),
            )
        if len(names) > 1:
            groups.append(tuple(names))
    return PlaceholderRegistry(specs=specs, groups=tuple(groups))


@lru_cache(maxsize=1)
def default_registry() -> PlaceholderRegistry:
    return load_registry()


class PlaceholderSampler:
    """Curated-or-baseline sampling with candidates extracted once up front."""

    def __init__(self, registry: PlaceholderRegistry, baseline: Iterable[str | CommandRecord]):
        self.registry = registry
        cmds = [b.cmd if isinstance(b, CommandRecord) else b for b in baseline]
        names = registry.names
        self.candidates: dict[str, list[str]] = {}
        by_pattern: dict[tuple[str, str], list[str]] = {}
        for name in names:
            spec = registry[name]
            key = (spec.extraction_pattern, spec.validator)
            if key not in by_pattern:
                found = [v for cmd in cmds for v in spec.extract(cmd)]
                by_pattern[key] = [v for v in found if not registry.pattern.search(v)]
            self.candidates[name] = by_pattern[key]

    def sample(self, name: str, alpha: float, rng: np.random.Generator) -> str:
        spec = self.registry[name]
        pool = self.candidates.get(name) or []
        if rng.random() < alpha or not pool:
            return spec.draw_curated(rng)
        return pool[int(rng.integers(len(pool)))]

    def bindings(self, names: Sequence[str], alpha: float, rng: np.random.Generator) -> dict[str, str]:
        out: dict[str, str] = {}
        for name in names:
            value = self.sample(name, alpha, rng)
            for group in self.registry.groups:
                if name in group:
                    taken = {out[g] for g in group if g in out}
                    for _ in range(50):
                        if value not in taken:
                            break
                        value = self.sample(name, alpha, rng)
            out[name] = value
        return out


def sample_placeholder(
    spec: PlaceholderSpec,
    baseline: Sequence[str | CommandRecord],
    alpha: float,
    rng: np.random.Generator,
) -> str:
    """Draw one value for ``spec``: curated with probability ``alpha``, else from the baseline.

    Falls back to the curated pool when the baseline yields no valid candidate.
    """
    registry = PlaceholderRegistry(specs={spec.name: spec})
    return PlaceholderSampler(registry, baseline).sample(spec.name, alpha, rng)


# --------------------------------------------------------------------------
# templates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    id: str
    pattern: str
    split: str = "unassigned"
    source: str = ""

    def placeholders(self, registry: PlaceholderRegistry | None = None) -> list[str]:
        return (registry or default_registry()).find(self.pattern)


def load_templates(path: str | Path | None = None, registry: PlaceholderRegistry | None = None) -> list[Template]:
    if path is None:
        text = resources.files("lotlsynth").joinpath("data/templates.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    doc = json.loads(text)
    items = doc["templates"] if isinstance(doc, dict) else doc
    templates = [Template(id=str(t["id"]), pattern=t["pattern"], source=t.get("source", "")) for t in items]
    ids = [t.id for t in templates]
    if len(set(ids)) != len(ids):
        raise ValueError("template ids must be unique")
    registry = registry or default_registry()
    for t in templates:
        if not t.pattern.strip():
            raise ValueError(f"template {t.id} has an empty pattern")
    return templates


def expand_template(t: Template, bindings: Mapping[str, str], registry: PlaceholderRegistry | None = None) -> str:
    """Substitute every placeholder occurrence in one pass, longest name first."""
    registry = registry or default_registry()
    missing = [n for n in registry.find(t.pattern) if n not in bindings]
    if missing:
        raise UnboundPlaceholderError(f"template {t.id}: unbound placeholder {missing[0]}")
    return registry.pattern.sub(lambda m: bindings[m.group(0)], t.pattern)


def split_templates(templates: Sequence[Template], train_ratio: float, seed: int) -> tuple[list[Template], list[Template]]:
    if not templates:
        raise ValueError("no templates to split")
    if not 0 < train_ratio <= 1:
        raise ValueError(f"train_ratio must be in (0, 1], got {train_ratio}")
    ordered = sorted(templates, key=lambda t: t.id)
    n_train = math.ceil(train_ratio * len(ordered) - 1e-9)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    train_idx = set(perm[:n_train].tolist())
    train = [replace(t, split="train") for i, t in enumerate(ordered) if i in train_idx]
    test = [replace(t, split="test") for i, t in enumerate(ordered) if i not in train_idx]
    return train, test


def default_variants(templates: Sequence[Template], registry: PlaceholderRegistry | None = None) -> list[str]:
    return [expand_template(t, DEFAULT_BINDINGS, registry) for t in templates]


# --------------------------------------------------------------------------
# dataset construction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisConfig:
    alpha: float = 0.5
    train_ratio: float = 0.7
    seed: int = 0
    # None means "number of templates in the split minus one" (at least 1)
    target_balance_delta: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.train_ratio <= 1.0:
            raise ValueError(f"train_ratio must be in (0, 1], got {self.train_ratio}")
        if self.target_balance_delta is not None and self.target_balance_delta < 1:
            raise ValueError("target_balance_delta must be at least 1")


@dataclass
class SplitStats:
    generated: dict[str, int] = field(default_factory=dict)
    exhausted: list[str] = field(default_factory=list)


def _generate_split(
    templates: Sequence[Template],
    target: int,
    delta: int,
    sampler: PlaceholderSampler,
    alpha: float,
    rng: np.random.Generator,
    forbidden: set[str],
    split: str,
) -> tuple[list[CommandRecord], SplitStats]:
    registry = sampler.registry
    slots = {t.id: registry.find(t.pattern) for t in templates}
    active = sorted(templates, key=lambda t: t.id)
    stats = SplitStats(generated={t.id: 0 for t in active})
    evil: list[CommandRecord] = []
    seen: set[str] = set()

    def balanced() -> bool:
        return abs(len(evil) - target) < delta

    while active and not balanced():
        for t in list(active):
            for _ in range(MAX_DUPLICATE_ATTEMPTS):
                cmd = expand_template(t, sampler.bindings(slots[t.id], alpha, rng), registry)
                if cmd not in seen and cmd not in forbidden:
                    break
            else:
                log.warning("template %s: no new unique variant after %d attempts; excluded",
                            t.id, MAX_DUPLICATE_ATTEMPTS)
                active.remove(t)
                stats.exhausted.append(t.id)
                continue
            seen.add(cmd)
            evil.append(CommandRecord(cmd=cmd, label=MALICIOUS, origin=f"template:{t.id}", split=split))
            stats.generated[t.id] += 1
            if balanced():
                break
    return evil, stats


def build_dataset(
    train_templates: Sequence[Template],
    test_templates: Sequence[Template],
    baseline_train: Sequence[CommandRecord],
    baseline_test: Sequence[CommandRecord],
    cfg: SynthesisConfig,
    registry: PlaceholderRegistry | None = None,
    stats: dict | None = None,
) -> tuple[list[CommandRecord], list[CommandRecord]]:
    """Generate malicious variants per split until classes balance, then merge with the baselines.

    Templates are visited round-robin, one new unique variant each, and the
    loop stops as soon as the malicious count is within the balance delta of
    the benign count. Train variants are generated first and excluded from
    the test split; variants colliding with any baseline command are dropped.
    """
    registry = registry or default_registry()
    if not train_templates:
        raise ValueError("at least one training template is required")
    train_ids = {t.id for t in train_templates}
    overlap = train_ids & {t.id for t in test_templates}
    if overlap:
        raise ValueError(f"templates assigned to both splits: {sorted(overlap)}")
    for r in (*baseline_train, *baseline_test):
        if r.label != BENIGN:
            raise ValueError("baseline records must be benign")
    if cfg.target_balance_delta is not None and cfg.target_balance_delta >= max(len(train_templates), 2):
        raise ValueError(
            f"target_balance_delta={cfg.target_balance_delta} must be smaller than the "
            f"number of training templates ({len(train_templates)})"
        )

    rng = np.random.default_rng(cfg.seed)
    benign_cmds = {r.cmd for r in baseline_train} | {r.cmd for r in baseline_test}

    def delta_for(templates: Sequence[Template]) -> int:
        if cfg.target_balance_delta is not None:
            return cfg.target_balance_delta
        return max(1, len(templates) - 1)

    train_sampler = PlaceholderSampler(registry, baseline_train)
    evil_train, train_stats = _generate_split(
        train_templates, len(baseline_train), delta_for(train_templates), train_sampler,
        cfg.alpha, rng, benign_cmds, "train",
    )
    evil_test: list[CommandRecord] = []
    test_stats = SplitStats()
    if test_templates:
        test_sampler = PlaceholderSampler(registry, baseline_test)
        forbidden = benign_cmds | {r.cmd for r in evil_train}
        evil_test, test_stats = _generate_split(
            test_templates, len(baseline_test), delta_for(test_templates), test_sampler,
            cfg.alpha, rng, forbidden, "test",
        )
    if stats is not None:
        stats["train"] = train_stats
        stats["test"] = test_stats

    train = [replace(r, split="train") for r in baseline_train] + evil_train
    test = [replace(r, split="test") for r in baseline_test] + evil_test
    return train, test


def build_default_dataset(
    templates: Sequence[Template],
    baseline: Sequence[CommandRecord],
    split: str = "train",
    balanced: bool = False,
    registry: PlaceholderRegistry | None = None,
) -> list[CommandRecord]:
    """Baseline plus one default-valued variant per template (no augmentation).

    With ``balanced`` the default variants are repeated until they match the
    baseline size, mimicking naive oversampling.
    """
    registry = registry or default_registry()
    evil = [
        CommandRecord(cmd=cmd, label=MALICIOUS, origin=f"template:{t.id}", split=split)
        for t, cmd in zip(templates, default_variants(templates, registry))
    ]
    if balanced and evil:
        reps = math.ceil(len(baseline) / len(evil))
        evil = (evil * reps)[: len(baseline)]
    return [replace(r, split=split) for r in baseline] + evil
