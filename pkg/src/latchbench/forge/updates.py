"""Intent pairs: the archived intent and the mid-conversation update that supersedes it."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from typing import Any

from ..backends import Backend, BackendError, ChatMessage, CompletionParams
from ..prompts import UPDATE_SYSTEM, UPDATE_TASK
from ..tokens import short_hash
from .corpus import DialogueSource


class UpdateGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntentPair:
    g1_text: str
    g2_text: str
    g1_id: str
    g2_id: str
    relation: str = ""
    source: str = "templated"

    def __post_init__(self):
        if self.g1_text == self.g2_text:
            raise ValueError("g1_text and g2_text must differ")

    def swapped(self) -> "IntentPair":
        return IntentPair(self.g2_text, self.g1_text, self.g2_id, self.g1_id, f"swapped:{self.relation}", self.source)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "IntentPair":
        return cls(**obj)


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])[\"')\]]*\s+(?=\S)")


def count_sentences(text: str) -> int:
    text = text.strip()
    if not text:
        return 0
    return len([s for s in _SENTENCE_SPLIT.split(text) if s.strip()])


@lru_cache(maxsize=1)
def load_templates() -> dict[str, Any]:
    raw = resources.files("latchbench.data").joinpath("update_templates.json").read_text(encoding="utf-8")
    table = json.loads(raw)
    for c in table["constraints"]:
        c["_re"] = re.compile(c["pattern"], re.IGNORECASE)
    return table


def _swap_value(constraint: dict[str, Any], value: str) -> str:
    swap = constraint["swap"]
    if swap == "increment":
        return str(int(value) + 1)
    if swap == "time_shift":
        hh, mm = value.split(":")
        return f"{(int(hh) + 2) % 24:02d}:{mm}"
    return swap[value.lower()]


def _noun_for(dialogue: DialogueSource, turn_text: str, nouns: dict[str, str]) -> str:
    lowered = turn_text.lower()
    for domain, noun in nouns.items():
        if domain in lowered:
            return noun
    for tag in dialogue.domain_tags:
        if tag.lower() in nouns:
            return nouns[tag.lower()]
    return "booking"


def find_last_constraint(dialogue: DialogueSource) -> tuple[dict[str, Any], str, str] | None:
    """Return ``(constraint, value, turn_text)`` for the latest user constraint, if any."""
    table = load_templates()
    for text in reversed(dialogue.user_turns()):
        best = None
        for c in table["constraints"]:
            for m in c["_re"].finditer(text):
                if best is None or m.start() > best[1].start():
                    best = (c, m)
        if best is not None:
            c, m = best
            value = m.group(1) if m.re.groups == 1 else m.group(0)
            if c["swap"] not in ("increment", "time_shift"):
                value = value.lower()
            return c, value, text
    return None


def _make_pair(dialogue: DialogueSource, g1: str, g2: str, relation: str, source: str) -> IntentPair:
    return IntentPair(
        g1_text=g1,
        g2_text=g2,
        g1_id="G1-" + short_hash(dialogue.id, g1),
        g2_id="G2-" + short_hash(dialogue.id, g2),
        relation=relation,
        source=source,
    )


def templated_update(dialogue: DialogueSource) -> IntentPair:
    table = load_templates()
    found = find_last_constraint(dialogue)
    if found is None:
        fb = table["fallback"]
        return _make_pair(dialogue, fb["g1"], fb["g2"], fb["id"], "templated")
    c, value, turn_text = found
    noun = _noun_for(dialogue, turn_text, table["domain_nouns"])
    swap = _swap_value(c, value)
    fields = {"value": value, "swap": swap, "noun": noun}
    return _make_pair(
        dialogue,
        c["g1"].format(**fields),
        c["g2"].format(**fields),
        f"{c['id']}:{value}->{swap}",
        "templated",
    )


def _archived_intent(dialogue: DialogueSource) -> str:
    found = find_last_constraint(dialogue)
    if found is not None:
        c, value, turn_text = found
        noun = _noun_for(dialogue, turn_text, load_templates()["domain_nouns"])
        return c["g1"].format(value=value, swap=_swap_value(c, value), noun=noun)
    first = dialogue.user_turns()[0] if dialogue.user_turns() else dialogue.turns[0].text
    return _SENTENCE_SPLIT.split(first.strip())[0]


def dialogue_messages(dialogue: DialogueSource) -> list[ChatMessage]:
    return [ChatMessage("user" if t.speaker == "user" else "assistant", t.text) for t in dialogue.turns]


def generate_update(
    dialogue: DialogueSource,
    mode: str = "templated",
    backend: Backend | None = None,
    params: CompletionParams | None = None,
) -> IntentPair:
    """Produce the intent pair for one dialogue.

    ``templated`` fills the contradiction table from the dialogue's last user
    constraint. ``dynamic`` asks ``backend`` for a one-sentence preference
    change given the turn history; a multi-sentence reply is retried once.
    """
    if mode == "templated":
        return templated_update(dialogue)
    if mode != "dynamic":
        raise ValueError(f"unknown update mode {mode!r}")
    if backend is None:
        raise ValueError("dynamic update generation requires a backend")

    messages = [ChatMessage("system", UPDATE_SYSTEM), *dialogue_messages(dialogue),
                ChatMessage("user", UPDATE_TASK.format(case=dialogue.id))]
    params = params or CompletionParams()
    g2 = ""
    for _ in range(2):
        try:
            g2 = backend.complete(messages, params).text.strip().strip('"').strip()
        except BackendError as exc:
            raise UpdateGenerationError(f"{dialogue.id}: update backend failed: {exc}") from exc
        if count_sentences(g2) == 1:
            break
    else:
        raise UpdateGenerationError(f"{dialogue.id}: backend returned {count_sentences(g2)} sentences twice")

    g1 = _archived_intent(dialogue)
    if g1 == g2:
        raise UpdateGenerationError(f"{dialogue.id}: generated update repeats the archived intent")
    return _make_pair(dialogue, g1, g2, "dynamic", "dynamic")
