"""Source dialogue corpus: the JSONL interchange format and a MultiWOZ 2.2 converter."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

logger = logging.getLogger(__name__)

SPEAKERS = ("user", "system")


class CorpusError(ValueError):
    """Raised when a corpus file cannot be read or holds no usable dialogues."""


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str


@dataclass(frozen=True)
class DialogueSource:
    id: str
    turns: tuple[Turn, ...]
    domain_tags: tuple[str, ...] = field(default_factory=tuple)

    def user_turns(self) -> list[str]:
        return [t.text for t in self.turns if t.speaker == "user"]

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "turns": [{"speaker": t.speaker, "text": t.text} for t in self.turns],
            "domains": list(self.domain_tags),
        }


def _parse_record(obj: Any) -> DialogueSource:
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    did = obj.get("id")
    if not isinstance(did, str) or not did:
        raise ValueError("missing or empty 'id'")
    raw_turns = obj.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        raise ValueError("'turns' must be a non-empty list")
    turns = []
    for j, t in enumerate(raw_turns):
        if not isinstance(t, dict):
            raise ValueError(f"turn {j} is not an object")
        speaker = t.get("speaker")
        text = t.get("text")
        if speaker not in SPEAKERS:
            raise ValueError(f"turn {j} has speaker {speaker!r}; expected one of {SPEAKERS}")
        if not isinstance(text, str) or not text.strip():
            raise ValueError(f"turn {j} has empty text")
        turns.append(Turn(speaker, text))
    domains = obj.get("domains", [])
    if not isinstance(domains, list) or not all(isinstance(d, str) for d in domains):
        raise ValueError("'domains' must be a list of strings")
    return DialogueSource(did, tuple(turns), tuple(domains))


def load_dialogues(path: str | Path, limit: int | None = None) -> list[DialogueSource]:
    """Read a JSONL corpus, validating each record.

    Records are returned in file order. A malformed record aborts the load
    with its 1-based record index in the message.
    """
    if limit is not None and limit < 0:
        raise ValueError("limit must be non-negative")
    if limit == 0:
        return []
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc

    out: list[DialogueSource] = []
    seen: set[str] = set()
    with fh:
        index = 0
        for line in fh:
            if not line.strip():
                continue
            index += 1
            try:
                dlg = _parse_record(json.loads(line))
            except (json.JSONDecodeError, ValueError) as exc:
                raise CorpusError(f"{path}: malformed record {index}: {exc}") from exc
            if dlg.id in seen:
                raise CorpusError(f"{path}: malformed record {index}: duplicate id {dlg.id!r}")
            seen.add(dlg.id)
            out.append(dlg)
            if limit is not None and len(out) >= limit:
                break
    if not out:
        raise CorpusError(f"{path}: no valid dialogues")
    return out


def write_dialogues(dialogues: Iterable[DialogueSource], path: str | Path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(d.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


# ---------------------------------------------------------------- MultiWOZ 2.2

def _speaker_name(raw: Any) -> str:
    # HF columnar export uses 0/1, the GitHub release uses "USER"/"SYSTEM".
    if raw in (0, "0", "USER", "user"):
        return "user"
    if raw in (1, "1", "SYSTEM", "system"):
        return "system"
    raise ValueError(f"unknown MultiWOZ speaker {raw!r}")


def _convert_multiwoz(dp: dict[str, Any]) -> DialogueSource:
    did = dp.get("dialogue_id") or dp.get("id")
    turns_raw = dp["turns"]
    if isinstance(turns_raw, dict):
        pairs = zip(turns_raw["speaker"], turns_raw["utterance"])
    else:
        pairs = ((t["speaker"], t["utterance"]) for t in turns_raw)
    turns = tuple(Turn(_speaker_name(s), u.strip()) for s, u in pairs if u and u.strip())
    services = dp.get("services") or []
    return DialogueSource(str(did), turns, tuple(services))


def _iter_multiwoz_records(src: Path) -> Iterator[dict[str, Any]]:
    files = sorted(p for p in src.rglob("*") if p.suffix in (".json", ".jsonl")) if src.is_dir() else [src]
    for f in files:
        if f.name in ("schema.json", "dialog_acts.json"):
            continue
        text = f.read_text(encoding="utf-8")
        if f.suffix == ".jsonl":
            for line in text.splitlines():
                if line.strip():
                    yield json.loads(line)
        else:
            data = json.loads(text)
            if isinstance(data, dict):
                data = [data]
            yield from data


def import_multiwoz(src: str | Path, dest: str | Path, limit: int | None = None) -> int:
    """Convert MultiWOZ 2.2 dialogues (GitHub release or HF export) to corpus JSONL.

    ``src`` may be a single ``.json``/``.jsonl`` file or a directory such as
    the release's ``test/`` split. Returns the number of dialogues written.
    """
    src = Path(src)
    if not src.exists():
        raise CorpusError(f"MultiWOZ source {src} does not exist")
    converted: list[DialogueSource] = []
    for i, dp in enumerate(_iter_multiwoz_records(src), start=1):
        try:
            dlg = _convert_multiwoz(dp)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{src}: malformed MultiWOZ record {i}: {exc}") from exc
        if not dlg.turns:
            logger.warning("skipping empty MultiWOZ dialogue %s", dlg.id)
            continue
        converted.append(dlg)
        if limit is not None and len(converted) >= limit:
            break
    if not converted:
        raise CorpusError(f"{src}: no dialogues converted")
    return write_dialogues(converted, dest)
