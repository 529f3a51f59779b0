import pytest
from hypothesis import given, settings, strategies as st

from latchbench.forge.builders import (
    EQUIDISTANT_XS,
    FactChain,
    Fact,
    Trajectory,
    TrajectorySkipped,
    build_trajectory,
    make_fact_chain,
    symmetry_residual,
)
from latchbench.forge.updates import generate_update
from latchbench.tokens import estimate_tokens

from conftest import forge
from oracles import geometry_violations


@pytest.mark.parametrize("tier", ["shallow", "high_entropy", "hijack", "equidistant"])
def test_invariants_hold(tier, dialogues):
    for d in dialogues[:8]:
        traj = forge(tier, d)
        assert geometry_violations(traj) == []


def test_shallow_layout(shallow):
    pair = shallow.intent_pair
    assert shallow.budget_tokens == 2000
    assert shallow.seed(pair.g1_id).placed_offset_tokens == 0
    assert abs(shallow.placed_fraction(pair.g2_id) - 0.92) <= 0.02
    (fact,) = shallow.fact_ids()
    assert abs(shallow.placed_fraction(fact) - 0.95) <= 0.02
    record = [b for b in shallow.assembled_turns if b.payload_id == fact][0]
    assert shallow.expected_signal in record.text


def test_hijack_layout(hijack):
    kinds = [s.payload_kind for s in hijack.seeds]
    assert kinds.count("fact") == 3 and kinds.count("decoy") == 1
    xs = [hijack.placed_fraction(f) for f in hijack.fact_ids()]
    assert all(abs(x - t) <= 0.02 for x, t in zip(xs, (0.35, 0.5, 0.65)))
    assert abs(hijack.placed_fraction(hijack.intent_pair.g2_id) - 0.9) <= 0.02
    # The signal only appears in the final fact.
    text = "".join(b.text for b in hijack.assembled_turns)
    assert text.count(hijack.expected_signal) == 1


def test_high_entropy_update_is_a_notice(dialogues):
    traj = forge("high_entropy", dialogues[2])
    g2 = [b for b in traj.assembled_turns if b.payload_id == traj.intent_pair.g2_id][0]
    assert g2.speaker == "notice"
    assert abs(traj.placed_fraction(traj.fact_ids()[0]) - 0.5) <= 0.02


def test_equidistant_symmetry(dialogues):
    traj = forge("equidistant", dialogues[3])
    assert traj.id == f"equidistant-{dialogues[3].id}"
    assert symmetry_residual(traj) <= 0.01 * traj.token_count
    assert abs(traj.placed_fraction(traj.intent_pair.g1_id) - EQUIDISTANT_XS[0]) <= 0.02


def test_deterministic_and_roundtrip(dialogues):
    a = forge("hijack", dialogues[4], seed=7)
    b = forge("hijack", dialogues[4], seed=7)
    assert a.dumps() == b.dumps()
    assert Trajectory.from_json(a.to_json()).dumps() == a.dumps()
    assert forge("hijack", dialogues[4], seed=8).dumps() != a.dumps()


def test_budget_too_small_is_skipped(dialogues):
    with pytest.raises(TrajectorySkipped):
        forge("shallow", dialogues[0], budget=40)


def test_unknown_tier(dialogues):
    with pytest.raises(ValueError):
        build_trajectory("deep", dialogues[0], generate_update(dialogues[0]))


@given(st.integers(0, 2**40), st.integers(1, 5))
def test_fact_chain_is_a_simple_chain(seed, length):
    chain = make_fact_chain(seed, length)
    assert len(chain.facts) == length
    assert chain.facts[0].depends_on is None
    for prev, cur in zip(chain.facts, chain.facts[1:]):
        assert cur.depends_on == prev.fact_id
    assert chain.answer_signal in chain.facts[-1].statement


def test_fact_chain_validation():
    with pytest.raises(ValueError):
        FactChain((Fact("a", "x Signal"), Fact("b", "y", "zzz")), "Signal")
    with pytest.raises(ValueError):
        FactChain((Fact("a", "Signal here"), Fact("b", "Signal again", "a")), "Signal")
    with pytest.raises(ValueError):
        FactChain((Fact("a", "nothing"),), "Signal")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([3000, 6000, 10000]))
def test_size_property(seed, budget):
    from latchbench.forge.sample import sample_dialogues

    d = sample_dialogues(1, seed=seed)[0]
    traj = forge("hijack", d, seed=seed, budget=budget)
    assert abs(sum(estimate_tokens(b.text) for b in traj.assembled_turns) - budget) <= 0.02 * budget
