"""Content blocks and token-offset placement of payloads."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Sequence

from ..tokens import DEFAULT_CHARS_PER_TOKEN, estimate_tokens

KINDS = ("dialogue", "noise", "payload", "query")
SEED_TOLERANCE = 0.02


class GeometryError(ValueError):
    """A payload cannot reach its target fraction without splitting a non-noise block."""


@dataclass(frozen=True)
class Block:
    kind: str
    speaker: str
    text: str
    payload_id: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "speaker": self.speaker, "text": self.text, "payload_id": self.payload_id}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Block":
        return cls(obj["kind"], obj["speaker"], obj["text"], obj.get("payload_id"))


def block_offsets(blocks: Sequence[Block], cpt: int = DEFAULT_CHARS_PER_TOKEN) -> list[int]:
    """Start offset of each block plus the total as the final element."""
    out = [0]
    for b in blocks:
        out.append(out[-1] + estimate_tokens(b.text, cpt))
    return out


def total_tokens(blocks: Sequence[Block], cpt: int = DEFAULT_CHARS_PER_TOKEN) -> int:
    return block_offsets(blocks, cpt)[-1]


def payload_offset(blocks: Sequence[Block], payload_id: str, cpt: int = DEFAULT_CHARS_PER_TOKEN) -> tuple[int, int]:
    """``(start, end)`` token offsets of the block carrying ``payload_id``."""
    offs = block_offsets(blocks, cpt)
    for i, b in enumerate(blocks):
        if b.payload_id == payload_id:
            return offs[i], offs[i + 1]
    raise KeyError(payload_id)


def _split_noise(block: Block, at_tokens: int, cpt: int) -> tuple[Block, Block]:
    """Split a noise block at the line break nearest ``at_tokens`` into it."""
    text = block.text
    target_char = at_tokens * cpt
    cuts = [i + 1 for i, ch in enumerate(text) if ch == "\n" and 0 < i + 1 < len(text)]
    if not cuts:
        raise GeometryError("noise block has no interior line break to split at")
    cut = min(cuts, key=lambda c: (abs(c - target_char), c))
    return replace(block, text=text[:cut]), replace(block, text=text[cut:])


def place_at_fraction(
    blocks: Sequence[Block],
    payload: Block | str,
    x: float,
    *,
    final_total: int | None = None,
    cpt: int = DEFAULT_CHARS_PER_TOKEN,
    tolerance: float = SEED_TOLERANCE,
) -> tuple[list[Block], int]:
    """Insert ``payload`` so that its start offset over the total is within ``tolerance`` of ``x``.

    Payloads go on block boundaries, or split a noise block at a line break;
    dialogue turns are never split. ``final_total`` lets a builder aim at the
    size the context will have once every payload is in place.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if not blocks:
        raise ValueError("blocks must be non-empty")
    if isinstance(payload, str):
        payload = Block("payload", "user", payload)
    p_len = estimate_tokens(payload.text, cpt)
    blocks = list(blocks)
    offs = block_offsets(blocks, cpt)
    total = final_total if final_total is not None else offs[-1] + p_len
    target = x * total

    boundary = min(range(len(offs)), key=lambda i: (abs(offs[i] - target), i))
    if abs(offs[boundary] - target) / total > tolerance / 2:
        # Boundary snapping is too coarse here; try to split the covering noise block.
        for i, b in enumerate(blocks):
            if offs[i] < target < offs[i + 1]:
                if b.kind != "noise":
                    if abs(offs[boundary] - target) / total <= tolerance:
                        break
                    raise GeometryError(
                        f"x={x:.3f} falls inside a {b.kind} block; payloads never split non-noise blocks"
                    )
                head, tail = _split_noise(b, round(target - offs[i]), cpt)
                blocks[i:i + 1] = [head, tail]
                offs = block_offsets(blocks, cpt)
                boundary = i + 1
                break
    blocks.insert(boundary, payload)
    placed = offs[boundary]
    if abs(placed / total - x) > tolerance:
        raise GeometryError(f"payload placed at {placed / total:.4f}, target {x:.4f}")
    return blocks, placed
