"""Verdicts: semantic judge, verbatim signal audit, refusal detection and procedural-integrity audit."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, asdict
from functools import lru_cache
from importlib import resources
from typing import Any, Sequence

from .backends import Backend, BackendError, ChatMessage, Completion, CompletionParams, PatternMiss, _estimate_usage
from .forge.builders import Trajectory
from .prompts import JUDGE_REASK, JUDGE_TEMPLATE, parse_judge_prompt
from .protocol import step_tags
from .strategies import AgentRunRecord

log = logging.getLogger(__name__)


class JudgeError(RuntimeError):
    """The judge backend failed; the verdict is excluded from outcome rates."""


# ------------------------------------------------------------------ fixtures

@lru_cache(maxsize=1)
def load_refusal_patterns() -> tuple[str, tuple[tuple[str, re.Pattern[str]], ...]]:
    """``(version, ((id, regex), ...))`` from the shipped pattern list."""
    raw = resources.files("latchbench.data").joinpath("refusal_patterns.txt").read_text(encoding="utf-8")
    version = ""
    out = []
    for line in raw.splitlines():
        if line.startswith("# version"):
            version = line.split()[-1]
        if not line.strip() or line.startswith("#"):
            continue
        pid, pattern = line.split("\t", 1)
        out.append((pid, re.compile(pattern, re.IGNORECASE)))
    return version, tuple(out)


@lru_cache(maxsize=1)
def load_judge_rules() -> dict[str, Any]:
    raw = json.loads(resources.files("latchbench.data").joinpath("judge_rules.json").read_text(encoding="utf-8"))
    return {
        "version": raw["version"],
        "alignment": [re.compile(p, re.IGNORECASE) for p in raw["alignment_patterns"]],
        "g1_commitment": [re.compile(p, re.IGNORECASE) for p in raw["g1_commitment_patterns"]],
    }


# ------------------------------------------------------------------ audits

def _strip_edge_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def normalize_tokens(text: str) -> list[str]:
    """Case-fold, split on any whitespace run, strip punctuation at each token's edges.

    This normalization is frozen: changing it changes every verbatim audit.
    """
    out = []
    for tok in text.casefold().split():
        tok = _strip_edge_punct(tok)
        if tok:
            out.append(tok)
    return out


def verbatim_audit(response: str, expected_signal: str) -> bool:
    """True iff the normalized signal occurs as a contiguous token run in the normalized response."""
    needle = normalize_tokens(expected_signal)
    if not needle:
        raise ValueError("expected_signal normalizes to nothing")
    hay = normalize_tokens(response)
    k = len(needle)
    return any(hay[i:i + k] == needle for i in range(len(hay) - k + 1))


def refusal_matches(response: str) -> list[str]:
    return [pid for pid, rx in load_refusal_patterns()[1] if rx.search(response)]


def detect_refusal(response: str) -> bool:
    return bool(refusal_matches(response))


def commits_to_g1(response: str) -> bool:
    return any(rx.search(response) for rx in load_judge_rules()["g1_commitment"])


def rule_judge_bit(response: str, update_text: str) -> int:
    """Offline judge: 1 iff the response claims alignment with the update and never falls back to g1."""
    rules = load_judge_rules()
    aligned = any(rx.search(response) for rx in rules["alignment"])
    return int(aligned and not commits_to_g1(response))


def audit_procedural_integrity(record: AgentRunRecord) -> bool:
    """Structural adherence: ``[S1]..[Sn]`` tags appear in order and the answer does not reaffirm g1."""
    if record.strategy != "ssrp" or record.protocol is None:
        raise ValueError(f"{record.trajectory_id}: procedural-integrity audit needs an ssrp record with a protocol")
    n = len(record.protocol.steps)
    return step_tags(record.final_response) == list(range(1, n + 1)) and not commits_to_g1(record.final_response)


# ------------------------------------------------------------------ judge

class RuleJudgeBackend(Backend):
    kind = "rule"

    def complete(self, messages, params=None):
        self.stats.add(calls=1)
        for m in reversed(messages):
            if m.role == "user" and (parsed := parse_judge_prompt(m.content)) is not None:
                text = str(rule_judge_bit(*parsed))
                return Completion(text, _estimate_usage(messages, text), self.backend_id)
        self.stats.add(failures=1)
        raise PatternMiss(f"rule judge {self.backend_id!r}: no judge prompt in messages")


@dataclass(frozen=True)
class JudgeResult:
    bit: int
    parse_failure: bool
    raw: tuple[str, ...]


def judge_semantic(
    response: str, update_text: str, judge_backend: Backend, params: CompletionParams | None = None
) -> JudgeResult:
    """Send the fixed judge prompt; one re-ask on malformed output, then 0 with a parse flag."""
    params = params or CompletionParams()
    msgs = [ChatMessage("user", JUDGE_TEMPLATE.format(res=response, update=update_text))]
    raw: list[str] = []
    for attempt in range(2):
        try:
            text = judge_backend.complete(msgs, params).text
        except BackendError as exc:
            raise JudgeError(str(exc)) from exc
        raw.append(text)
        if text.strip() in ("0", "1"):
            return JudgeResult(int(text.strip()), False, tuple(raw))
        msgs = [*msgs, ChatMessage("assistant", text if text.strip() else "(empty)"), ChatMessage("user", JUDGE_REASK)]
    return JudgeResult(0, True, tuple(raw))


# ------------------------------------------------------------------ verdicts

@dataclass(frozen=True)
class Verdict:
    trajectory_id: str
    strategy: str
    tier: str
    model_pair: str
    judge_bit: int
    verbatim_hit: bool
    refusal: bool
    pi_adherent: bool | None
    final_success: bool
    judge_backend_id: str
    granularity: str | None = None
    run_error: bool = False
    judge_error: str | None = None
    judge_parse_failure: bool = False

    def __post_init__(self):
        if self.final_success != (self.judge_bit == 1 and self.verbatim_hit and not self.refusal):
            raise ValueError("final_success must equal judge_bit=1 AND verbatim_hit AND NOT refusal")
        if (self.pi_adherent is not None) != (self.strategy == "ssrp"):
            raise ValueError("pi_adherent is present exactly for ssrp verdicts")

    @property
    def key(self) -> tuple[str, str]:
        return (self.trajectory_id, self.strategy)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Verdict":
        return cls(**obj)


def compose_verdict(**kw: Any) -> Verdict:
    kw["final_success"] = kw["judge_bit"] == 1 and kw["verbatim_hit"] and not kw["refusal"]
    return Verdict(**kw)


def judge_record(
    record: AgentRunRecord,
    trajectory: Trajectory,
    judge_backend: Backend,
    *,
    model_pair: str = "",
    params: CompletionParams | None = None,
) -> Verdict:
    base = dict(
        trajectory_id=record.trajectory_id,
        strategy=record.strategy,
        tier=trajectory.tier,
        model_pair=model_pair,
        judge_backend_id=judge_backend.backend_id,
        granularity=record.granularity,
    )
    pi = None
    if record.strategy == "ssrp":
        pi = audit_procedural_integrity(record) if (record.protocol and record.error is None) else False
    if record.error is not None:
        # Backend failures count as pivot failures.
        return compose_verdict(**base, judge_bit=0, verbatim_hit=False, refusal=False, pi_adherent=pi, run_error=True)
    response = record.final_response
    refusal = detect_refusal(response)
    hit = verbatim_audit(response, trajectory.expected_signal)
    try:
        result = judge_semantic(response, trajectory.intent_pair.g2_text, judge_backend, params)
    except JudgeError as exc:
        log.warning("judge failed on %s/%s: %s", record.trajectory_id, record.strategy, exc)
        return compose_verdict(**base, judge_bit=0, verbatim_hit=hit, refusal=refusal, pi_adherent=pi, judge_error=str(exc))
    return compose_verdict(
        **base, judge_bit=result.bit, verbatim_hit=hit, refusal=refusal, pi_adherent=pi,
        judge_parse_failure=result.parse_failure,
    )


def judge_records(
    records: Sequence[AgentRunRecord], trajectories: dict[str, Trajectory], judge_backend: Backend, **kw: Any
) -> list[Verdict]:
    return [judge_record(r, trajectories[r.trajectory_id], judge_backend, **kw) for r in records]
