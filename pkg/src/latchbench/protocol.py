"""Synthesized procedures: granularity tiers, the line-oriented SOP format, parsing and rendering."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any

from .tokens import short_hash


class ProtocolError(ValueError):
    """An Architect response could not be turned into a valid protocol."""


@dataclass(frozen=True)
class GranularityTier:
    name: str
    step_bounds: tuple[int, int | None]
    needs_checkpoint: bool

    def admits(self, n_steps: int) -> bool:
        lo, hi = self.step_bounds
        return n_steps >= lo and (hi is None or n_steps <= hi)


GRANULARITY = {
    "hyper_compressed": GranularityTier("hyper_compressed", (1, 1), False),
    "optimal": GranularityTier("optimal", (3, 3), True),
    "verbose": GranularityTier("verbose", (10, None), True),
}


def get_tier(name: str) -> GranularityTier:
    try:
        return GRANULARITY[name]
    except KeyError:
        raise ValueError(f"unknown granularity tier {name!r}; expected one of {sorted(GRANULARITY)}") from None


@dataclass(frozen=True)
class Protocol:
    protocol_id: str
    steps: tuple[str, ...]
    checkpoints: tuple[str, ...]
    purge_directives: tuple[tuple[str, str], ...]
    tier: str
    source_architect: str

    def render(self) -> str:
        return render_sop(self.steps, self.checkpoints, self.purge_directives)

    def named_text(self) -> str:
        """Step and checkpoint text; fragments cited here are the ones the protocol points at."""
        return "\n".join(self.steps + self.checkpoints)

    def to_json(self) -> dict[str, Any]:
        return {
            "protocol_id": self.protocol_id,
            "steps": list(self.steps),
            "checkpoints": list(self.checkpoints),
            "purge_directives": [list(p) for p in self.purge_directives],
            "tier": self.tier,
            "source_architect": self.source_architect,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Protocol":
        return cls(
            obj["protocol_id"],
            tuple(obj["steps"]),
            tuple(obj["checkpoints"]),
            tuple((p[0], p[1]) for p in obj["purge_directives"]),
            obj["tier"],
            obj["source_architect"],
        )


def render_sop(steps, checkpoints=(), purges=()) -> str:
    lines = ["```sop"]
    lines += [f"STEP {i}: {s}" for i, s in enumerate(steps, start=1)]
    lines += [f"CHECKPOINT: {c}" for c in checkpoints]
    lines += [f"PURGE intent={pid}: {text}" for pid, text in purges]
    lines.append("```")
    return "\n".join(lines)


_FENCE = re.compile(r"```sop[ \t]*\n(.*?)```", re.DOTALL)
_STEP = re.compile(r"^STEP (\d+):\s*(.+)$")
_CHECK = re.compile(r"^CHECKPOINT:\s*(.+)$")
_PURGE = re.compile(r"^PURGE intent=(\S+?):\s*(.+)$")


def parse_sop(text: str, tier: str, g1_id: str, *, case: str = "", source_architect: str = "") -> Protocol:
    """Parse and validate one fenced ``sop`` block.

    Raises :class:`ProtocolError` with a short reason that the caller can feed
    back to the Architect in a correction prompt.
    """
    spec = get_tier(tier)
    m = _FENCE.search(text)
    if not m:
        raise ProtocolError("no fenced sop block found")
    steps: list[str] = []
    checkpoints: list[str] = []
    purges: list[tuple[str, str]] = []
    for raw in m.group(1).splitlines():
        line = raw.strip()
        if not line:
            continue
        if sm := _STEP.match(line):
            if int(sm.group(1)) != len(steps) + 1:
                raise ProtocolError(f"step numbering breaks at 'STEP {sm.group(1)}'")
            steps.append(sm.group(2).strip())
        elif cm := _CHECK.match(line):
            checkpoints.append(cm.group(1).strip())
        elif pm := _PURGE.match(line):
            purges.append((pm.group(1), pm.group(2).strip()))
        else:
            raise ProtocolError(f"unrecognized line {line[:60]!r}")
    if not spec.admits(len(steps)):
        lo, hi = spec.step_bounds
        want = f"exactly {lo}" if lo == hi else f"at least {lo}"
        raise ProtocolError(f"{tier} tier needs {want} steps, got {len(steps)}")
    if spec.needs_checkpoint and not checkpoints:
        raise ProtocolError(f"{tier} tier needs at least one checkpoint")
    if not any(pid == g1_id for pid, _ in purges):
        raise ProtocolError("missing purge directive")
    rendered = render_sop(steps, checkpoints, purges)
    return Protocol(
        protocol_id="P-" + short_hash(case, rendered),
        steps=tuple(steps),
        checkpoints=tuple(checkpoints),
        purge_directives=tuple(purges),
        tier=tier,
        source_architect=source_architect,
    )


_TAG = re.compile(r"\[S(\d+)\]")


def step_tags(text: str) -> list[int]:
    """Distinct ``[Sn]`` tags in order of first appearance."""
    seen: list[int] = []
    for m in _TAG.finditer(text):
        n = int(m.group(1))
        if n not in seen:
            seen.append(n)
    return seen
