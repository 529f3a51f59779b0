"""Seeded system-log filler used to pad contexts to their token budget."""

from __future__ import annotations

import datetime as dt
import random
from dataclasses import dataclass
from typing import Sequence

from ..tokens import DEFAULT_CHARS_PER_TOKEN, derive_seed


class NoiseError(RuntimeError):
    """The forbidden-substring constraint could not be met."""


@dataclass(frozen=True)
class NoiseBlock:
    text: str
    style: str
    rng_seed: int


SUBSYSTEMS = (
    "scheduler", "ingest", "cache", "authsvc", "billing", "router", "kvstore", "indexer",
    "mailer", "gateway", "replica", "metrics", "queue", "storage", "sync", "ledger-db",
)
EVENTS = (
    "job.rebalance", "conn.reset", "cache.evict", "lease.renew", "gc.pause", "shard.migrate",
    "token.refresh", "batch.flush", "probe.timeout", "disk.compact", "session.expire",
    "config.reload", "quota.check", "snapshot.write", "worker.spawn", "retry.backoff",
)
LEVELS = ("INFO", "INFO", "INFO", "DEBUG", "DEBUG", "WARN", "TRACE")
_EPOCH = dt.datetime(2025, 3, 1, 8, 0, 0)

MAX_LINE_ATTEMPTS = 50
MAX_BLOCK_ATTEMPTS = 5


def _high_entropy_line(rng: random.Random, ts: dt.datetime) -> str:
    kv = rng.choice((
        f"latency={rng.randint(1, 950)}ms",
        f"shard={rng.randint(0, 63)}",
        f"retries={rng.randint(0, 7)}",
        f"bytes={rng.randint(128, 1 << 20)}",
        f"node=n-{rng.randint(1, 96):02d}",
        f"region=r-{rng.randint(1, 9)}",
    ))
    return (
        f"{ts.isoformat(timespec='milliseconds')}Z [{rng.choice(SUBSYSTEMS)}] {rng.choice(LEVELS)} "
        f"{rng.choice(EVENTS)} id=0x{rng.getrandbits(24):06x} {kv}\n"
    )


def _low_entropy_line(rng: random.Random, ts: dt.datetime, seq: int) -> str:
    return f"{ts.isoformat(timespec='seconds')}Z [monitor] INFO heartbeat ok seq={seq}\n"


def _contains_any(text: str, forbidden_cf: Sequence[str]) -> bool:
    cf = text.casefold()
    return any(f in cf for f in forbidden_cf)


def _generate(seed: int, target_chars: int, forbidden_cf: Sequence[str], entropy: str) -> str:
    rng = random.Random(seed)
    ts = _EPOCH + dt.timedelta(seconds=rng.randint(0, 86_400 * 30))
    parts: list[str] = []
    total = 0
    seq = 0
    while True:
        for _ in range(MAX_LINE_ATTEMPTS):
            ts += dt.timedelta(milliseconds=rng.randint(5, 4_000))
            seq += 1
            line = _high_entropy_line(rng, ts) if entropy == "high" else _low_entropy_line(rng, ts, seq)
            if not _contains_any(line, forbidden_cf):
                break
        else:
            raise NoiseError("no log line avoids the forbidden substrings; forbidden set is pathological")
        if total + len(line) > target_chars:
            break
        parts.append(line)
        total += len(line)
    remaining = target_chars - total
    if remaining > 0:
        pad = ("[pad] " + "." * remaining)[: remaining - 1] + "\n"
        parts.append(pad)
    return "".join(parts)


def make_noise(
    rng_seed: int,
    target_tokens: int,
    forbidden: Sequence[str] = (),
    chars_per_token: int = DEFAULT_CHARS_PER_TOKEN,
    entropy: str = "high",
) -> NoiseBlock:
    """Build a log-dump block whose estimated size is exactly ``target_tokens``.

    No forbidden string (case-insensitive) may occur in the text. Lines that
    collide are redrawn; after bounded attempts the call fails.
    """
    if target_tokens <= 0:
        raise ValueError("target_tokens must be positive")
    if entropy not in ("high", "low"):
        raise ValueError("entropy must be 'high' or 'low'")
    forbidden_cf = [f.casefold() for f in forbidden]
    if any(not f for f in forbidden_cf):
        raise NoiseError("empty forbidden string matches every text")
    target_chars = target_tokens * chars_per_token
    for attempt in range(MAX_BLOCK_ATTEMPTS):
        text = _generate(derive_seed(rng_seed, "noise", attempt), target_chars, forbidden_cf, entropy)
        if not _contains_any(text, forbidden_cf):
            return NoiseBlock(text, "system_log", rng_seed)
    raise NoiseError("forbidden substring spans generated lines on every attempt")
