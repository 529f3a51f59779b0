import json

import pytest
from hypothesis import given, strategies as st

from latchbench.store import (
    BLOB_THRESHOLD,
    JsonlAppender,
    LedgerCorruption,
    LedgerEntry,
    RunLedger,
    canonical,
    content_hash,
    externalize_prompts,
    read_jsonl,
    resolve_prompts,
    truncate_torn_tail,
    write_jsonl,
)

json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(max_size=10),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=5), inner, max_size=4),
    max_leaves=12,
)


@given(st.dictionaries(st.text(max_size=5), json_values, max_size=5))
def test_hash_ignores_key_order(obj):
    reordered = dict(reversed(list(obj.items())))
    assert content_hash(obj) == content_hash(reordered)
    assert json.loads(canonical(obj)) == obj


def test_jsonl_roundtrip_and_torn_tail(tmp_path):
    path = tmp_path / "a.jsonl"
    write_jsonl(path, [{"a": 1}, {"b": 2}])
    with JsonlAppender(path) as app:
        app.append({"c": 3})
    assert read_jsonl(path) == [{"a": 1}, {"b": 2}, {"c": 3}]
    with path.open("a") as fh:
        fh.write('{"d": ')
    with pytest.raises(ValueError, match="truncated"):
        read_jsonl(path)
    assert read_jsonl(path, tolerate_torn_tail=True) == [{"a": 1}, {"b": 2}, {"c": 3}]
    assert truncate_torn_tail(path) is True
    assert truncate_torn_tail(path) is False
    assert read_jsonl(path) == [{"a": 1}, {"b": 2}, {"c": 3}]
    assert read_jsonl(tmp_path / "missing.jsonl") == []


def test_interior_corruption_is_fatal(tmp_path):
    path = tmp_path / "a.jsonl"
    path.write_text('{"a": 1}\nnot json\n{"b": 2}\n')
    with pytest.raises(ValueError, match="line 2"):
        read_jsonl(path, tolerate_torn_tail=True)


def test_blobs_roundtrip(tmp_path):
    big = [{"role": "user", "content": "x" * (BLOB_THRESHOLD + 10)}]
    small = [{"role": "user", "content": "hi"}]
    rec = {"prompts": [big, small], "other": 1}
    out = externalize_prompts(rec, tmp_path / "blobs")
    assert out["prompts"][0]["blob"].startswith("sha256:") and out["prompts"][1] == small
    assert resolve_prompts(out, tmp_path / "blobs") == rec


def _entry(tid, status="done"):
    return LedgerEntry(tid, "vanilla", status, "sha256:i", "sha256:o")


def test_ledger_load_and_corruption(tmp_path):
    path = tmp_path / "ledger.jsonl"
    write_jsonl(path, [_entry("t1").to_json(), _entry("t2", "error").to_json()])
    ledger = RunLedger.load(path)
    assert ledger.counts() == {"done": 1, "error": 1}
    assert ledger.status(("t3", "vanilla")) == "pending"
    write_jsonl(path, [_entry("t1").to_json(), _entry("t1").to_json()])
    with pytest.raises(LedgerCorruption, match="duplicate"):
        RunLedger.load(path)
    write_jsonl(path, [{"trajectory_id": "t1"}])
    with pytest.raises(LedgerCorruption, match="malformed"):
        RunLedger.load(path)
    write_jsonl(path, [_entry("t1", "running").to_json()])
    with pytest.raises(LedgerCorruption):
        RunLedger.load(path)
    path.write_text("garbage\n{}\n")
    with pytest.raises(LedgerCorruption):
        RunLedger.load(path)
