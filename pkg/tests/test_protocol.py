import pytest
from hypothesis import given, strategies as st

from latchbench.protocol import GRANULARITY, Protocol, ProtocolError, get_tier, parse_sop, render_sop, step_tags

G1 = "G1-abc"


def _sop(n_steps, checkpoints=1, purge=True):
    return render_sop(
        [f"do thing {i}" for i in range(1, n_steps + 1)],
        [f"check {i}" for i in range(checkpoints)],
        [(G1, "drop the stale preference")] if purge else [],
    )


@pytest.mark.parametrize("tier,n,cp", [("hyper_compressed", 1, 0), ("optimal", 3, 1), ("verbose", 10, 2), ("verbose", 14, 1)])
def test_valid_protocols_parse(tier, n, cp):
    p = parse_sop("Here it is:\n" + _sop(n, cp) + "\nbye", tier, G1, case="C1", source_architect="arch")
    assert len(p.steps) == n and len(p.checkpoints) == cp
    assert p.protocol_id.startswith("P-")
    assert Protocol.from_json(p.to_json()) == p
    assert parse_sop(p.render(), tier, G1, case="C1", source_architect="arch") == p


@pytest.mark.parametrize("text,tier,reason", [
    ("no fence at all", "optimal", "no fenced sop block"),
    (_sop(2), "optimal", "exactly 3 steps, got 2"),
    (_sop(9), "verbose", "at least 10 steps, got 9"),
    (_sop(3, checkpoints=0), "optimal", "checkpoint"),
    (_sop(3, purge=False), "optimal", "missing purge directive"),
    ("```sop\nSTEP 1: a\nSTEP 3: b\n```", "optimal", "numbering"),
    ("```sop\nSTEP 1: a\nwhatever\n```", "optimal", "unrecognized line"),
])
def test_invalid_protocols_name_a_reason(text, tier, reason):
    with pytest.raises(ProtocolError, match=reason):
        parse_sop(text, tier, G1)


def test_purge_must_name_g1():
    text = render_sop(["a"], [], [("G1-other", "x")])
    with pytest.raises(ProtocolError, match="purge"):
        parse_sop(text, "hyper_compressed", G1)


def test_tier_table():
    assert GRANULARITY["optimal"].admits(3) and not GRANULARITY["optimal"].admits(4)
    assert GRANULARITY["verbose"].admits(100)
    with pytest.raises(ValueError):
        get_tier("medium")


@given(st.lists(st.integers(1, 30), max_size=20))
def test_step_tags_first_appearance(ns):
    text = " ".join(f"[S{n}] x" for n in ns)
    expected = list(dict.fromkeys(ns))
    assert step_tags(text) == expected
