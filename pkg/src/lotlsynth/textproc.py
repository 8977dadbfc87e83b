"""Command-line tokenizers (whitespace, wordpunct, BPE) and capped vocabularies."""

from __future__ import annotations

import hashlib
import heapq
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

VERSION = 1
PAD, OOV = "<pad>", "<oov>"
PAD_ID, OOV_ID = 0, 1
MODES = ("whitespace", "wordpunct", "bpe")

_WS_RE = re.compile(r"[ \t\n\r\f\v]+")
# ASCII word characters so that results do not depend on unicode tables
_WORDPUNCT_RE = re.compile(r"\w+|[^\w\s]+", re.ASCII)


def whitespace_tokenize(cmd: str) -> list[str]:
    return [t for t in _WS_RE.split(cmd) if t]


def wordpunct_tokenize(cmd: str) -> list[str]:
    return _WORDPUNCT_RE.findall(cmd)


# --------------------------------------------------------------------------
# BPE
# --------------------------------------------------------------------------

@dataclass
class BpeModel:
    merges: list[tuple[str, str]]
    alphabet: frozenset[str]
    _ranks: dict[tuple[str, str], int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.merges = [tuple(m) for m in self.merges]
        self.alphabet = frozenset(self.alphabet)
        self._ranks = {m: i for i, m in enumerate(self.merges)}
        self._encode_word = lru_cache(maxsize=200_000)(self._encode_word_uncached)

    def _encode_word_uncached(self, word: str) -> tuple[str, ...]:
        parts = list(word)
        ranks = self._ranks
        while len(parts) > 1:
            best, best_rank = -1, None
            for i in range(len(parts) - 1):
                r = ranks.get((parts[i], parts[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = i, r
            if best_rank is None:
                break
            pair = self.merges[best_rank]
            merged, i = [], 0
            while i < len(parts):
                if i < len(parts) - 1 and (parts[i], parts[i + 1]) == pair:
                    merged.append(parts[i] + parts[i + 1])
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
        return tuple(parts)

    def encode(self, cmd: str) -> list[str]:
        out: list[str] = []
        for word in whitespace_tokenize(cmd):
            out.extend(self._encode_word(word))
        return out

    def to_dict(self) -> dict:
        return {"version": VERSION, "alphabet": sorted(self.alphabet), "merges": [list(m) for m in self.merges]}

    @classmethod
    def from_dict(cls, d: dict) -> "BpeModel":
        _check_version(d)
        return cls(merges=[tuple(m) for m in d["merges"]], alphabet=frozenset(d["alphabet"]))


def train_bpe(corpus: Sequence[str], target_size: int, seed: int = 0, sample_size: int | None = None) -> BpeModel:
    """Learn merge rules until alphabet + merges + reserved ids reaches ``target_size``.

    Units are whitespace-separated words, so no merge crosses an argument
    boundary. Each step merges the most frequent adjacent pair; ties go to the
    lexicographically smallest (left, right). Training stops early once no
    pair occurs at least twice. ``seed`` only matters when ``sample_size``
    subsamples the corpus.
    """
    if not corpus:
        raise ValueError("cannot train BPE on an empty corpus")
    if sample_size is not None and sample_size < len(corpus):
        idx = np.sort(np.random.default_rng(seed).choice(len(corpus), size=sample_size, replace=False))
        corpus = [corpus[i] for i in idx]

    word_freq = Counter(w for cmd in corpus for w in whitespace_tokenize(cmd))
    words = sorted(word_freq)
    freqs = [word_freq[w] for w in words]
    seqs: list[list[str]] = [list(w) for w in words]
    alphabet = frozenset(c for w in words for c in w)
    if target_size <= len(alphabet):
        raise ValueError(f"target_size {target_size} must exceed alphabet size {len(alphabet)}")

    pair_counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = {}
    for wi, seq in enumerate(seqs):
        f = freqs[wi]
        for a, b in zip(seq, seq[1:]):
            pair_counts[(a, b)] += f
            where.setdefault((a, b), set()).add(wi)

    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)
    merges: list[tuple[str, str]] = []
    max_merges = max(0, target_size - len(alphabet) - len((PAD, OOV)))

    while len(merges) < max_merges and heap:
        neg, pair = heapq.heappop(heap)
        count = pair_counts.get(pair, 0)
        if count != -neg:
            continue  # stale entry; the current count was pushed when it changed
        if count < 2:
            break
        merges.append(pair)
        new_tok = pair[0] + pair[1]
        touched: Counter = Counter()
        for wi in sorted(where.pop(pair, ())):
            seq, f = seqs[wi], freqs[wi]
            for a, b in zip(seq, seq[1:]):
                touched[(a, b)] -= f
            merged, i = [], 0
            while i < len(seq):
                if i < len(seq) - 1 and seq[i] == pair[0] and seq[i + 1] == pair[1]:
                    merged.append(new_tok)
                    i += 2
                else:
                    merged.append(seq[i])
                    i += 1
            seqs[wi] = merged
            for a, b in zip(merged, merged[1:]):
                touched[(a, b)] += f
                where.setdefault((a, b), set()).add(wi)
        for p, d in touched.items():
            if d == 0:
                continue
            pair_counts[p] += d
            if pair_counts[p] <= 0:
                del pair_counts[p]
            else:
                heapq.heappush(heap, (-pair_counts[p], p))
        pair_counts.pop(pair, None)
    return BpeModel(merges=merges, alphabet=alphabet)


# --------------------------------------------------------------------------
# tokenizer facade
# --------------------------------------------------------------------------

def tokenize(cmd: str, mode: str = "wordpunct", bpe_model: BpeModel | None = None) -> list[str]:
    if mode == "whitespace":
        return whitespace_tokenize(cmd)
    if mode == "wordpunct":
        return wordpunct_tokenize(cmd)
    if mode == "bpe":
        if bpe_model is None:
            raise ValueError("mode 'bpe' requires a trained BpeModel")
        return bpe_model.encode(cmd)
    raise ValueError(f"unknown tokenizer mode {mode!r}; expected one of {MODES}")


@dataclass
class Tokenizer:
    mode: str = "wordpunct"
    bpe: BpeModel | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown tokenizer mode {self.mode!r}")
        if self.mode == "bpe" and self.bpe is None:
            raise ValueError("mode 'bpe' requires a trained BpeModel")

    def __call__(self, cmd: str) -> list[str]:
        return tokenize(cmd, self.mode, self.bpe)

    def batch(self, cmds: Iterable[str]) -> list[list[str]]:
        return [self(c) for c in cmds]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "bpe": self.bpe.to_dict() if self.bpe else None}

    @classmethod
    def from_dict(cls, d: dict) -> "Tokenizer":
        bpe = BpeModel.from_dict(d["bpe"]) if d.get("bpe") else None
        return cls(mode=d["mode"], bpe=bpe)


# --------------------------------------------------------------------------
# vocabulary
# --------------------------------------------------------------------------

class Vocabulary:
    """Frequency-ranked token ids with ``<pad>``=0 and ``<oov>``=1."""

    def __init__(self, tokens: Sequence[str], size_cap: int):
        if size_cap < 3:
            raise ValueError(f"size_cap must be at least 3, got {size_cap}")
        if list(tokens[:2]) != [PAD, OOV]:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(tokens) > size_cap:
            raise ValueError(f"{len(tokens)} tokens exceed size_cap {size_cap}")
        self.tokens = list(tokens)
        self.size_cap = size_cap
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, OOV_ID) for t in tokens]

    def to_dict(self) -> dict:
        return {"version": VERSION, "size_cap": self.size_cap, "tokens": self.tokens}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        _check_version(d)
        return cls(d["tokens"], d["size_cap"])

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def build_vocabulary(tokenized: Iterable[Sequence[str]], size_cap: int) -> Vocabulary:
    """Keep the ``size_cap - 2`` most frequent tokens (ties broken lexicographically)."""
    if size_cap < 3:
        raise ValueError(f"size_cap must be at least 3, got {size_cap}")
    counts: Counter = Counter()
    for toks in tokenized:
        counts.update(toks)
    counts.pop(PAD, None)
    counts.pop(OOV, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: size_cap - 2]
    return Vocabulary([PAD, OOV, *(t for t, _ in ranked)], size_cap)


def _check_version(d: dict) -> None:
    if d.get("version") != VERSION:
        raise ValueError(f"unsupported serialization version {d.get('version')!r}")


def save_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
