import pytest
from hypothesis import given, settings, strategies as st

from latchbench.forge.geometry import Block, GeometryError, block_offsets, payload_offset, place_at_fraction, total_tokens
from latchbench.forge.noise import make_noise


def _context(n_noise=2000):
    return [
        Block("dialogue", "user", "u" * 400),
        Block("noise", "log", make_noise(5, n_noise).text),
        Block("query", "user", "q" * 40),
    ]


def test_offsets():
    blocks = [Block("noise", "log", "a" * 8), Block("query", "user", "b" * 5)]
    assert block_offsets(blocks) == [0, 2, 4]
    assert total_tokens(blocks) == 4


@settings(max_examples=60, deadline=None)
@given(st.floats(0.08, 0.95))
def test_payload_lands_within_tolerance(x):
    payload = Block("payload", "user", "p" * 80, "G2-x")
    blocks, placed = place_at_fraction(_context(), payload, x)
    total = total_tokens(blocks)
    start, end = payload_offset(blocks, "G2-x")
    assert start == placed
    assert abs(start / total - x) <= 0.02
    # Nothing but a noise block was split.
    assert [b for b in blocks if b.kind != "noise"][0].text == "u" * 400


def test_never_splits_dialogue():
    blocks = [Block("dialogue", "user", "u" * 4000), Block("query", "user", "q" * 40)]
    with pytest.raises(GeometryError):
        place_at_fraction(blocks, "p" * 40, 0.5)


def test_rejects_bad_x():
    with pytest.raises(ValueError):
        place_at_fraction(_context(), "p", 1.5)
    with pytest.raises(KeyError):
        payload_offset(_context(), "missing")


def test_block_roundtrip():
    b = Block("payload", "notice", "x", "G1-1")
    assert Block.from_json(b.to_json()) == b
