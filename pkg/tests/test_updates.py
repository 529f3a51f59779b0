import pytest

from latchbench.backends import ScriptedBackend
from latchbench.forge.corpus import DialogueSource, Turn
from latchbench.forge.updates import (
    IntentPair,
    UpdateGenerationError,
    count_sentences,
    find_last_constraint,
    generate_update,
    load_templates,
)

HOTEL = DialogueSource("H1", (
    Turn("user", "I need a cheap hotel in the north."),
    Turn("system", "Okay, any other needs?"),
    Turn("user", "Something cheap with parking please."),
), ("hotel",))


def test_templated_contradicts_price_tier():
    pair = generate_update(HOTEL, "templated")
    assert "cheap" in pair.g1_text and "expensive" in pair.g2_text
    assert count_sentences(pair.g2_text) == 1
    assert pair.g1_id.startswith("G1-") and pair.g2_id.startswith("G2-")
    assert pair.source == "templated" and pair.relation.startswith("price:")


def test_latest_constraint_wins():
    c, value, _ = find_last_constraint(HOTEL)
    assert (c["id"], value) == ("price", "cheap")


def test_every_sample_dialogue_gets_one_sentence_update(dialogues):
    for d in dialogues:
        pair = generate_update(d)
        assert count_sentences(pair.g2_text) == 1
        assert pair.g1_text != pair.g2_text


def test_template_table_is_versioned():
    assert load_templates()["version"] == "1"


def test_dynamic_passthrough():
    backend = ScriptedBackend("u", [("UPDATE TASK", "Actually, I would prefer a hotel in the south.")])
    pair = generate_update(HOTEL, "dynamic", backend)
    assert pair.g2_text == "Actually, I would prefer a hotel in the south."
    assert pair.source == "dynamic"


def test_dynamic_two_sentences_twice_fails():
    backend = ScriptedBackend("u", [("UPDATE TASK", "I changed my mind. Make it expensive.")])
    with pytest.raises(UpdateGenerationError, match="2 sentences twice"):
        generate_update(HOTEL, "dynamic", backend)
    assert backend.stats.snapshot()["calls"] == 2


def test_mode_contracts():
    with pytest.raises(ValueError):
        generate_update(HOTEL, "dynamic")
    with pytest.raises(ValueError):
        generate_update(HOTEL, "other")
    with pytest.raises(ValueError):
        IntentPair("same", "same", "a", "b")


def test_sentence_counter():
    assert count_sentences("") == 0
    assert count_sentences("One. Two!") == 2
    assert count_sentences("At 10:30 please.") == 1
