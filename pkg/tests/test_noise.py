import pytest
from hypothesis import given, settings, strategies as st

from latchbench.forge.noise import NoiseError, make_noise
from latchbench.tokens import estimate_tokens


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 3000), st.sampled_from(["high", "low"]))
def test_exact_size(seed, target, entropy):
    block = make_noise(seed, target, entropy=entropy)
    assert estimate_tokens(block.text) == target


def test_deterministic_and_seed_sensitive():
    assert make_noise(1, 500).text == make_noise(1, 500).text
    assert make_noise(1, 500).text != make_noise(2, 500).text


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_forbidden_strings_never_appear(seed):
    forbidden = ["expensive", "Q-17", "ERROR", "cache"]
    text = make_noise(seed, 800, forbidden=forbidden).text.casefold()
    assert not any(f.casefold() in text for f in forbidden)


def test_contract_errors():
    with pytest.raises(ValueError):
        make_noise(0, 0)
    with pytest.raises(ValueError):
        make_noise(0, 10, entropy="medium")
    with pytest.raises(NoiseError):
        make_noise(0, 10, forbidden=[""])
    # Every line contains a space, so this can never be satisfied.
    with pytest.raises(NoiseError):
        make_noise(0, 200, forbidden=[" "])
