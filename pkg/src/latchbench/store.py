"""Line-delimited JSON stores, canonical hashing, prompt blobs and the run ledger."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

log = logging.getLogger(__name__)

BLOB_THRESHOLD = 64 * 1024


class LedgerCorruption(RuntimeError):
    """The ledger cannot be trusted; start a fresh run."""


def canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def content_hash(obj: Any) -> str:
    return "sha256:" + hashlib.sha256(canonical(obj).encode("utf-8")).hexdigest()


def write_jsonl(path: Path, rows: Iterable[Any]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(canonical(row) + "\n")
            n += 1
    os.replace(tmp, path)
    return n


class JsonlAppender:
    """Single-writer appender that flushes every line."""

    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self.path = path
        self._fh = path.open("a", encoding="utf-8")

    def append(self, row: Any) -> None:
        self._fh.write(canonical(row) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "JsonlAppender":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def read_jsonl(path: Path, *, tolerate_torn_tail: bool = False) -> list[Any]:
    """Parse every line; a torn final line (no newline, unparseable) is dropped when tolerated."""
    if not path.exists():
        return []
    raw = path.read_text(encoding="utf-8")
    lines = raw.split("\n")
    tail = lines.pop()  # text after the last newline; empty for a clean file
    out = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {i} is not valid JSON") from exc
    if tail.strip():
        try:
            out.append(json.loads(tail))
        except json.JSONDecodeError:
            if not tolerate_torn_tail:
                raise ValueError(f"{path}: final line is truncated") from None
            log.warning("%s: dropping torn final line", path)
    return out


def iter_jsonl(path: Path) -> Iterator[Any]:
    yield from read_jsonl(path)


def truncate_torn_tail(path: Path) -> bool:
    """Cut a partial final line left by an interrupted append. Returns True if something was cut."""
    if not path.exists():
        return False
    data = path.read_bytes()
    if not data or data.endswith(b"\n"):
        return False
    cut = data.rfind(b"\n") + 1
    with path.open("r+b") as fh:
        fh.truncate(cut)
    return True


# ------------------------------------------------------------------ blobs

def externalize_prompts(record: dict[str, Any], blob_dir: Path) -> dict[str, Any]:
    """Move any prompt array over the blob threshold to ``blob_dir`` and reference it by hash."""
    prompts = []
    for p in record.get("prompts", []):
        text = canonical(p)
        if len(text.encode("utf-8")) > BLOB_THRESHOLD:
            digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
            blob_dir.mkdir(parents=True, exist_ok=True)
            target = blob_dir / f"{digest}.json"
            if not target.exists():
                target.write_text(text, encoding="utf-8")
            prompts.append({"blob": f"sha256:{digest}"})
        else:
            prompts.append(p)
    return {**record, "prompts": prompts}


def resolve_prompts(record: dict[str, Any], blob_dir: Path) -> dict[str, Any]:
    prompts = []
    for p in record.get("prompts", []):
        if isinstance(p, dict) and "blob" in p:
            digest = p["blob"].split(":", 1)[1]
            prompts.append(json.loads((blob_dir / f"{digest}.json").read_text(encoding="utf-8")))
        else:
            prompts.append(p)
    return {**record, "prompts": prompts}


# ------------------------------------------------------------------ ledger

@dataclass(frozen=True)
class LedgerEntry:
    trajectory_id: str
    strategy: str
    status: str  # done | error
    input_hash: str
    output_hash: str

    @property
    def key(self) -> tuple[str, str]:
        return (self.trajectory_id, self.strategy)

    def to_json(self) -> dict[str, Any]:
        return {
            "trajectory_id": self.trajectory_id,
            "strategy": self.strategy,
            "status": self.status,
            "input_hash": self.input_hash,
            "output_hash": self.output_hash,
        }


@dataclass
class RunLedger:
    """Append-only status log per ``(trajectory, strategy)``; absent keys are pending."""

    entries: dict[tuple[str, str], LedgerEntry] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path) -> "RunLedger":
        try:
            rows = read_jsonl(path, tolerate_torn_tail=True)
        except ValueError as exc:
            raise LedgerCorruption(f"{exc}; refusing to resume, start a fresh run") from exc
        ledger = cls()
        for i, row in enumerate(rows, start=1):
            try:
                entry = LedgerEntry(**row)
            except TypeError as exc:
                raise LedgerCorruption(f"{path}: entry {i} malformed; refusing to resume, start a fresh run") from exc
            if entry.status not in ("done", "error"):
                raise LedgerCorruption(f"{path}: entry {i} has status {entry.status!r}")
            if entry.key in ledger.entries:
                raise LedgerCorruption(f"{path}: duplicate entry for {entry.key}; start a fresh run")
            ledger.entries[entry.key] = entry
        return ledger

    def status(self, key: tuple[str, str]) -> str:
        e = self.entries.get(key)
        return e.status if e else "pending"

    def counts(self) -> dict[str, int]:
        out = {"done": 0, "error": 0}
        for e in self.entries.values():
            out[e.status] += 1
        return out

    def record(self, entry: LedgerEntry) -> None:
        self.entries[entry.key] = entry
