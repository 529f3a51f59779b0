from __future__ import annotations

import json
from pathlib import Path

import pytest

from latchbench.forge.builders import build_trajectory
from latchbench.forge.corpus import write_dialogues
from latchbench.forge.sample import sample_dialogues
from latchbench.forge.updates import generate_update
from latchbench.tokens import derive_seed


@pytest.fixture(scope="session")
def dialogues():
    return sample_dialogues(40, seed=99)


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory, dialogues):
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    write_dialogues(dialogues, path)
    return path


def forge(tier, dialogue, seed=0, **kw):
    return build_trajectory(tier, dialogue, generate_update(dialogue), rng_seed=derive_seed(seed, dialogue.id, tier), **kw)


@pytest.fixture(scope="session")
def hijack(dialogues):
    return forge("hijack", dialogues[0])


@pytest.fixture(scope="session")
def shallow(dialogues):
    return forge("shallow", dialogues[1])


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


def minimal_trajectory(fact_xs, g2_x=1.0, g1_x=None, total=10_000, tid="MIN"):
    """Seeds only; enough for the simulator, which reads nothing but placement."""
    from latchbench.forge.builders import SeedSpec, Trajectory
    from latchbench.forge.updates import IntentPair

    pair = IntentPair("keep it cheap", "make it expensive", "G1-m", "G2-m")
    seeds = [SeedSpec("fact", f"F{i}-m", x, round(x * total)) for i, x in enumerate(fact_xs, start=1)]
    seeds.append(SeedSpec("intent", "G2-m", g2_x, round(g2_x * total)))
    if g1_x is not None:
        seeds.append(SeedSpec("intent", "G1-m", g1_x, round(g1_x * total)))
    seeds.sort(key=lambda s: s.placed_offset_tokens)
    return Trajectory(tid, "hijack", [], total, total, seeds, pair, None, 0, "Signal Value")


def scripted_fixture(trajectories, *, drop=()):
    """Per-case scripted responses for every harness role; ``drop`` lists ``(case, role_tag)`` to leave out."""
    from latchbench.protocol import render_sop

    entries = []
    for t in trajectories:
        answer = f"Following the updated request, the verified answer is {t.expected_signal}."
        sop = render_sop(
            [f"Adopt {t.intent_pair.g2_id}.", "Read the verified records.", "State the verified value."],
            [f"Confirm nothing relies on {t.intent_pair.g1_id}."],
            [(t.intent_pair.g1_id, "superseded")],
        )
        by_tag = {
            "TASK": answer,
            "CRITIQUE TASK": "On review the answer stands. " + answer,
            "ARCHITECT TASK": sop,
            "EXECUTIVE TASK": f"[S1] adopted\n[S2] read\n[S3] {answer}",
        }
        for tag, response in by_tag.items():
            if (t.id, tag) not in drop:
                entries.append({"match_prefix": f"{tag}: Case [{t.id}].", "response": response})
    entries.append({"match_prefix": "Does this agent response:", "response": "1"})
    return entries


def scripted_experiment(root, trajectories, *, parallelism=1, drop=(), experiment_id="det"):
    """Write a fixture, a config and a trajectory store under ``root``; return the loaded config."""
    import yaml

    from latchbench.config import load_config
    from latchbench.orchestrator import layout
    from latchbench.store import write_jsonl

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_json(root / "fixture.json", scripted_fixture(trajectories, drop=drop))
    (root / "exp.yaml").write_text(yaml.safe_dump({
        "experiment_id": experiment_id,
        "global_seed": 11,
        "output_dir": "out",
        "parallelism": parallelism,
        "model_pair": "fix/fix",
        "backends": {"fix": {"kind": "scripted", "fixture": "fixture.json"}},
        "strategies": {
            "vanilla": {"backend": "fix"},
            "ssrp": {"architect": "fix", "executive": "fix"},
            "reflexion": {"backend": "fix"},
        },
        "judge": "fix",
    }), encoding="utf-8")
    cfg = load_config(root / "exp.yaml")
    write_jsonl(layout(cfg).trajectories, (t.to_json() for t in trajectories))
    return cfg
