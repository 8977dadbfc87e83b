"""Black-box evasion transforms for malicious command lines.

Two families are provided: prepending benign text (benign injection) and
shell-level rewrites that survive auditd process telemetry (flag tampering,
decimal IPs, binary renaming, futile code). The hybrid attack chains both.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .records import MALICIOUS, CommandRecord

KINDS = ("benign_injection", "shell_escape", "hybrid")
MAX_PAYLOAD = 128

DEFAULT_FLAGS: dict[str, str] = {
    "bash": "-x",
    "sh": "-x",
    "nc": "-v",
    "netcat": "-v",
    "python": "-u",
    "python3": "-u",
    "perl": "-w",
}
RENAMABLE = frozenset({
    "bash", "sh", "zsh", "dash", "ksh", "nc", "ncat", "netcat", "python", "python2", "python3",
    "perl", "php", "ruby", "lua", "lua5.1", "socat", "telnet", "awk", "gawk", "rcat", "openssl",
})
DEFAULT_NOOPS = ("id",)
_KEYWORDS = frozenset({"do", "then", "else", "elif", "time", "if", "while", "until", "!", "{", "exec", "nohup", "sudo"})
_RESERVED_NAMES = _KEYWORDS | RENAMABLE | {"fi", "done", "in", "for", "case", "esac", "cp", "id", "true"}

_IPV4_RE = re.compile(r"(?<![\w.])(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})(?![\w]|\.\d)")
_ASSIGN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*=")
_REDIRECT_RE = re.compile(r"\d*[<>]")


# --------------------------------------------------------------------------
# shell scanning
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Word:
    start: int
    end: int
    text: str


def _scan(cmd: str) -> tuple[list[list[Word]], list[int]]:
    """Split ``cmd`` into simple commands outside quotes.

    Returns the words of each simple command and the offsets of every
    unquoted ``;``. Quoted text stays inside its word.
    """
    segments: list[list[Word]] = [[]]
    semis: list[int] = []
    i, n = 0, len(cmd)
    start = None
    quote = None

    def close(end: int) -> None:
        nonlocal start
        if start is not None:
            segments[-1].append(Word(start, end, cmd[start:end]))
            start = None

    while i < n:
        c = cmd[i]
        if quote:
            if c == "\\" and quote == '"':
                i += 2
                continue
            if c == quote:
                quote = None
            i += 1
            continue
        if c in "'\"`":
            quote = c
            start = i if start is None else start
        elif c == "\\":
            start = i if start is None else start
            i += 2
            continue
        elif c.isspace():
            close(i)
        elif c in ";|&()\n":
            # redirections like 2>&1 or <&3 keep their ampersand
            if c == "&" and i > 0 and cmd[i - 1] in "<>":
                start = i if start is None else start
                i += 1
                continue
            close(i)
            if c == ";":
                semis.append(i)
            if segments[-1]:
                segments.append([])
        else:
            start = i if start is None else start
        i += 1
    close(n)
    if not segments[-1]:
        segments.pop()
    return segments, semis


def command_words(cmd: str) -> list[Word]:
    """The word in command position of every simple command."""
    out = []
    for seg in _scan(cmd)[0]:
        for w in seg:
            if _ASSIGN_RE.match(w.text) or w.text in _KEYWORDS or w.text.startswith("$("):
                continue
            if _REDIRECT_RE.match(w.text):
                continue
            out.append(w)
            break
    return out


def semicolon_boundaries(cmd: str) -> list[int]:
    return _scan(cmd)[1]


def _basename(word: str) -> str:
    return word.rsplit("/", 1)[-1]


def _splice(cmd: str, edits: Sequence[tuple[int, int, str]]) -> str:
    for start, end, text in sorted(edits, reverse=True):
        cmd = cmd[:start] + text + cmd[end:]
    return cmd


# --------------------------------------------------------------------------
# escape actions
# --------------------------------------------------------------------------

def encode_decimal_ip(ip: str) -> int:
    octets = [int(o) for o in ip.split(".")]
    if len(octets) != 4 or any(not 0 <= o <= 255 for o in octets):
        raise ValueError(f"not an IPv4 address: {ip!r}")
    return (octets[0] << 24) | (octets[1] << 16) | (octets[2] << 8) | octets[3]


def decode_decimal_ip(value: int) -> str:
    if not 0 <= value < 2**32:
        raise ValueError(f"{value} is outside the IPv4 range")
    return ".".join(str((value >> s) & 0xFF) for s in (24, 16, 8, 0))


def _valid_quads(cmd: str) -> list[re.Match]:
    return [m for m in _IPV4_RE.finditer(cmd) if all(int(g) <= 255 for g in m.groups())]


def decimal_ip(cmd: str, rng: np.random.Generator | None = None) -> str:
    return _splice(cmd, [(m.start(), m.end(), str(encode_decimal_ip(m.group(0)))) for m in _valid_quads(cmd)])


def flag_tamper(cmd: str, rng: np.random.Generator | None = None, flags: Mapping[str, str] = DEFAULT_FLAGS) -> str:
    edits = [(w.end, w.end, " " + flags[_basename(w.text)]) for w in command_words(cmd) if _basename(w.text) in flags]
    return _splice(cmd, edits)


def _short_name(rng: np.random.Generator, taken: set[str]) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    while True:
        name = "".join(letters[i] for i in rng.integers(0, 26, size=int(rng.integers(1, 4))))
        if name not in taken and name not in _RESERVED_NAMES:
            taken.add(name)
            return name


def binary_rename(cmd: str, rng: np.random.Generator) -> str:
    """``bash ARGS`` becomes ``cp bash r; r ARGS`` for every known binary in command position."""
    words = [w for w in command_words(cmd) if _basename(w.text) in RENAMABLE]
    if not words:
        return cmd
    taken = {w.text for seg in _scan(cmd)[0] for w in seg}
    names: dict[str, str] = {}
    for w in words:
        if w.text not in names:
            names[w.text] = _short_name(rng, taken)
    prelude = "".join(f"cp {src} {dst}; " for src, dst in names.items())
    return prelude + _splice(cmd, [(w.start, w.end, names[w.text]) for w in words])


def futile_code(cmd: str, rng: np.random.Generator, noops: Sequence[str] = DEFAULT_NOOPS) -> str:
    """Insert a no-op at a random ``;`` boundary, or as a prelude when there is none."""
    noop = noops[int(rng.integers(len(noops)))] if len(noops) > 1 else noops[0]
    bounds = semicolon_boundaries(cmd)
    if not bounds:
        return f"{noop};{cmd}"
    at = bounds[int(rng.integers(len(bounds)))] + 1
    return f"{cmd[:at]}{noop};{cmd[at:]}"


@dataclass(frozen=True)
class EscapeAction:
    name: str
    applies: Callable[[str], bool]
    transform: Callable[[str, np.random.Generator], str]


ESCAPE_ACTIONS: tuple[EscapeAction, ...] = (
    EscapeAction("decimal_ip", lambda c: bool(_valid_quads(c)), decimal_ip),
    EscapeAction("flag_tamper", lambda c: any(_basename(w.text) in DEFAULT_FLAGS for w in command_words(c)),
                 flag_tamper),
    EscapeAction("binary_rename", lambda c: any(_basename(w.text) in RENAMABLE for w in command_words(c)),
                 binary_rename),
    # a lone command has no boundary to hide a no-op in
    EscapeAction("futile_code", lambda c: bool(semicolon_boundaries(c)), futile_code),
)


def escape_perturb(x_evil: str, threshold: float, rng: np.random.Generator,
                   actions: Sequence[EscapeAction] = ESCAPE_ACTIONS) -> str:
    """Apply each applicable action independently with probability ``threshold``.

    One uniform draw is consumed per action, applicable or not, so the
    random stream does not depend on the input text.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    out = x_evil
    for action in actions:
        fire = rng.random() < threshold
        if fire and action.applies(out):
            out = action.transform(out, rng)
    return out


# --------------------------------------------------------------------------
# benign injection and hybrid
# --------------------------------------------------------------------------

def inject_benign(x_evil: str, payload_chars: int, adversary_baseline: Sequence[str], rng: np.random.Generator) -> str:
    """Prepend exactly ``payload_chars`` characters of sampled benign commands."""
    if payload_chars < 0:
        raise ValueError("payload_chars must be non-negative")
    if payload_chars == 0:
        return x_evil
    if not adversary_baseline:
        raise ValueError("adversary baseline is empty")
    parts: list[str] = []
    length = -1
    while length < payload_chars:
        pick = adversary_baseline[int(rng.integers(len(adversary_baseline)))]
        parts.append(pick)
        length += len(pick) + 1
    payload = ";".join(parts)[:payload_chars]
    return f"{payload};{x_evil}"


def hybrid_attack(x_evil: str, attack_param: float, adversary_baseline: Sequence[str], rng: np.random.Generator) -> str:
    if not 0.0 <= attack_param <= 1.0:
        raise ValueError(f"attack_param must be in [0, 1], got {attack_param}")
    escaped = escape_perturb(x_evil, attack_param, rng)
    return inject_benign(escaped, round(attack_param * MAX_PAYLOAD), adversary_baseline, rng)


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    payload_chars: int = 64
    threshold: float = 0.5
    attack_param: float = 0.5
    adversary_baseline: tuple[str, ...] = field(default=(), repr=False)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "benign_injection" and not 16 <= self.payload_chars <= MAX_PAYLOAD:
            raise ValueError(f"payload_chars must be in [16, {MAX_PAYLOAD}], got {self.payload_chars}")
        if not 0.0 <= self.threshold <= 1.0 or not 0.0 <= self.attack_param <= 1.0:
            raise ValueError("threshold and attack_param must be in [0, 1]")
        object.__setattr__(self, "adversary_baseline", tuple(self.adversary_baseline))
        if self.kind != "shell_escape" and not self.adversary_baseline:
            object.__setattr__(self, "adversary_baseline", tuple(load_adversary_baseline()))

    @property
    def effective_payload(self) -> int:
        return round(self.attack_param * MAX_PAYLOAD) if self.kind == "hybrid" else self.payload_chars

    @property
    def effective_threshold(self) -> float:
        return self.attack_param if self.kind == "hybrid" else self.threshold

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed, "payload_chars": self.effective_payload,
             "threshold": self.effective_threshold}
        if self.kind == "hybrid":
            d["attack_param"] = self.attack_param
        if self.kind == "benign_injection":
            del d["threshold"]
        if self.kind == "shell_escape":
            del d["payload_chars"]
        return d


def apply_attack(cmd: str, cfg: AttackConfig, rng: np.random.Generator) -> str:
    if cfg.kind == "benign_injection":
        return inject_benign(cmd, cfg.payload_chars, cfg.adversary_baseline, rng)
    if cfg.kind == "shell_escape":
        return escape_perturb(cmd, cfg.threshold, rng)
    return hybrid_attack(cmd, cfg.attack_param, cfg.adversary_baseline, rng)


def attack_records(records: Sequence[CommandRecord], cfg: AttackConfig) -> list[CommandRecord]:
    """Attack every malicious record; benign records pass through unchanged.

    Record ``i`` uses its own stream seeded by ``(cfg.seed, i)`` so results do
    not depend on processing order.
    """
    out = []
    for i, r in enumerate(records):
        if r.label != MALICIOUS:
            out.append(r)
            continue
        rng = np.random.default_rng([cfg.seed, i])
        out.append(replace(r, cmd=apply_attack(r.cmd, cfg, rng), origin=f"adversarial:{cfg.kind}"))
    return out


def load_adversary_baseline(path: str | Path | None = None) -> list[str]:
    if path is None:
        text = resources.files("lotlsynth").joinpath("data/adversary_baseline.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
