"""Agent strategies: stateless single call, Architect/Executive protocol, and two-call reflection."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

from .backends import Backend, BackendError, ChatMessage, CompletionParams
from .forge.builders import Trajectory
from .forge.geometry import Block
from .prompts import (
    AGENT_SYSTEM,
    ANSWER_TASK,
    ARCHITECT_SYSTEM,
    ARCHITECT_TASK,
    CRITIQUE_TASK,
    EXECUTIVE_SYSTEM,
    EXECUTIVE_TASK,
    FORMAT_CORRECTION,
    PROMPT_VERSION,
    PROTOCOL_HEADER,
    TIER_RULES,
)
from .protocol import Protocol, ProtocolError, get_tier, parse_sop
from .tokens import estimate_tokens

log = logging.getLogger(__name__)

STRATEGIES = ("vanilla", "ssrp", "reflexion")
SPEAKER_ROLES = {"user": "user", "agent": "assistant", "log": "user", "notice": "system"}


@dataclass
class AgentRunRecord:
    trajectory_id: str
    strategy: str
    backend_ids: tuple[str, str | None]
    prompts: list[list[dict[str, str]]] = field(default_factory=list)
    responses: list[str] = field(default_factory=list)
    final_response: str = ""
    protocol: Protocol | None = None
    call_count: int = 0
    wall_time_ms: int = 0
    error: dict[str, str] | None = None
    prompt_version: str = PROMPT_VERSION
    seed: int = 0
    granularity: str | None = None
    repair_calls: int = 0

    @property
    def key(self) -> tuple[str, str]:
        return (self.trajectory_id, self.strategy)

    def to_json(self, *, include_timing: bool = True) -> dict[str, Any]:
        out = {
            "trajectory_id": self.trajectory_id,
            "strategy": self.strategy,
            "backend_ids": list(self.backend_ids),
            "prompts": self.prompts,
            "responses": self.responses,
            "final_response": self.final_response,
            "protocol": self.protocol.to_json() if self.protocol else None,
            "call_count": self.call_count,
            "error": self.error,
            "prompt_version": self.prompt_version,
            "seed": self.seed,
            "granularity": self.granularity,
            "repair_calls": self.repair_calls,
        }
        if include_timing:
            out["wall_time_ms"] = self.wall_time_ms
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "AgentRunRecord":
        return cls(
            trajectory_id=obj["trajectory_id"],
            strategy=obj["strategy"],
            backend_ids=tuple(obj["backend_ids"]),
            prompts=obj["prompts"],
            responses=obj["responses"],
            final_response=obj["final_response"],
            protocol=Protocol.from_json(obj["protocol"]) if obj.get("protocol") else None,
            call_count=obj["call_count"],
            wall_time_ms=obj.get("wall_time_ms", 0),
            error=obj.get("error"),
            prompt_version=obj.get("prompt_version", PROMPT_VERSION),
            seed=obj.get("seed", 0),
            granularity=obj.get("granularity"),
            repair_calls=obj.get("repair_calls", 0),
        )


# ------------------------------------------------------------------ rendering

def render_context(blocks: Sequence[Block]) -> list[ChatMessage]:
    """Map assembled blocks onto chat roles; dialogue agent turns become assistant messages."""
    return [ChatMessage(SPEAKER_ROLES.get(b.speaker, "user"), b.text) for b in blocks]


def _windowed(blocks: Sequence[Block], window_tokens: int | None) -> list[Block]:
    if window_tokens is None:
        return list(blocks)
    kept: list[Block] = []
    used = 0
    for b in reversed(blocks):
        cost = estimate_tokens(b.text)
        if used + cost > window_tokens and kept:
            break
        kept.append(b)
        used += cost
    return kept[::-1]


def vanilla_messages(trajectory: Trajectory) -> list[ChatMessage]:
    return [
        ChatMessage("system", AGENT_SYSTEM),
        *render_context(trajectory.assembled_turns),
        ChatMessage("user", ANSWER_TASK.format(case=trajectory.id)),
    ]


def _dump(messages: Sequence[ChatMessage]) -> list[dict[str, str]]:
    return [m.to_json() for m in messages]


def _params(params: CompletionParams | None, seed: int) -> CompletionParams:
    if params is None:
        return CompletionParams(seed=seed)
    return CompletionParams(params.temperature, params.max_output_tokens, params.model_id, seed)


def _fail(record: AgentRunRecord, stage: str, exc: Exception) -> AgentRunRecord:
    record.error = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    record.final_response = ""
    log.warning("%s/%s failed at %s: %s", record.trajectory_id, record.strategy, stage, exc)
    return record


def _finish(record: AgentRunRecord, started: float) -> AgentRunRecord:
    record.wall_time_ms = int((time.perf_counter() - started) * 1000)
    if record.error is None:
        record.final_response = next((r for r in reversed(record.responses) if r.strip()), "")
    return record


# ------------------------------------------------------------------ strategies

def run_vanilla(
    trajectory: Trajectory, backend: Backend, params: CompletionParams | None = None, *, seed: int = 0
) -> AgentRunRecord:
    started = time.perf_counter()
    rec = AgentRunRecord(trajectory.id, "vanilla", (backend.backend_id, None), seed=seed)
    msgs = vanilla_messages(trajectory)
    rec.prompts.append(_dump(msgs))
    rec.call_count = 1
    try:
        rec.responses.append(backend.complete(msgs, _params(params, seed)).text)
    except BackendError as exc:
        _fail(rec, "answer", exc)
    return _finish(rec, started)


def _architect_messages(trajectory: Trajectory, tier: str) -> list[ChatMessage]:
    return [
        ChatMessage("system", ARCHITECT_SYSTEM),
        *render_context(trajectory.assembled_turns),
        ChatMessage("user", ARCHITECT_TASK.format(
            case=trajectory.id, tier=tier, rules=TIER_RULES[tier], g1_id=trajectory.intent_pair.g1_id,
        )),
    ]


def _synthesize(
    architect: Backend, trajectory: Trajectory, tier: str, params: CompletionParams, rec: AgentRunRecord | None
) -> Protocol:
    get_tier(tier)
    msgs = _architect_messages(trajectory, tier)
    g1_id = trajectory.intent_pair.g1_id
    reason = ""
    for attempt in range(2):
        if attempt == 1:
            msgs = [*msgs, ChatMessage("user", FORMAT_CORRECTION.format(
                case=trajectory.id, reason=reason, tier=tier, rules=TIER_RULES[tier], g1_id=g1_id,
            ))]
        text = architect.complete(msgs, params).text
        if rec is not None:
            rec.prompts.append(_dump(msgs))
            rec.responses.append(text)
            if attempt == 1:
                rec.repair_calls += 1
        try:
            return parse_sop(text, tier, g1_id, case=trajectory.id, source_architect=architect.backend_id)
        except ProtocolError as exc:
            reason = str(exc)
            msgs = [*msgs, ChatMessage("assistant", text)] if text.strip() else msgs
    raise ProtocolError(reason)


def synthesize_protocol(
    architect: Backend, trajectory: Trajectory, tier: str, params: CompletionParams | None = None
) -> Protocol:
    """Ask the Architect for a procedure; one corrective re-prompt on a parse or bounds failure."""
    return _synthesize(architect, trajectory, tier, params or CompletionParams(), None)


def executive_messages(
    protocol: Protocol, trajectory: Trajectory, window_tokens: int | None = None
) -> list[ChatMessage]:
    return [
        ChatMessage("system", EXECUTIVE_SYSTEM),
        ChatMessage("system", f"{PROTOCOL_HEADER}\n{protocol.render()}"),
        *render_context(_windowed(trajectory.assembled_turns, window_tokens)),
        ChatMessage("user", EXECUTIVE_TASK.format(case=trajectory.id)),
    ]


def execute_protocol(
    executive: Backend,
    protocol: Protocol,
    trajectory: Trajectory,
    params: CompletionParams | None = None,
    *,
    window_tokens: int | None = None,
) -> str:
    msgs = executive_messages(protocol, trajectory, window_tokens)
    return executive.complete(msgs, params or CompletionParams()).text


def run_ssrp(
    trajectory: Trajectory,
    architect: Backend,
    executive: Backend,
    tier: str = "optimal",
    params: CompletionParams | None = None,
    *,
    seed: int = 0,
    window_tokens: int | None = None,
) -> AgentRunRecord:
    started = time.perf_counter()
    rec = AgentRunRecord(
        trajectory.id, "ssrp", (architect.backend_id, executive.backend_id), seed=seed, granularity=tier
    )
    p = _params(params, seed)
    rec.call_count = 1
    try:
        protocol = _synthesize(architect, trajectory, tier, p, rec)
    except (BackendError, ProtocolError) as exc:
        return _finish(_fail(rec, "architect", exc), started)
    rec.protocol = protocol
    rec.call_count = 2
    msgs = executive_messages(protocol, trajectory, window_tokens)
    rec.prompts.append(_dump(msgs))
    try:
        rec.responses.append(executive.complete(msgs, p).text)
    except BackendError as exc:
        _fail(rec, "executive", exc)
    return _finish(rec, started)


def run_reflexion(
    trajectory: Trajectory, backend: Backend, params: CompletionParams | None = None, *, seed: int = 0
) -> AgentRunRecord:
    started = time.perf_counter()
    rec = AgentRunRecord(trajectory.id, "reflexion", (backend.backend_id, None), seed=seed)
    p = _params(params, seed)
    first = vanilla_messages(trajectory)
    rec.prompts.append(_dump(first))
    rec.call_count = 1
    try:
        draft = backend.complete(first, p).text
    except BackendError as exc:
        return _finish(_fail(rec, "answer", exc), started)
    rec.responses.append(draft)
    second = [*first]
    if draft.strip():
        second.append(ChatMessage("assistant", draft))
    second.append(ChatMessage("user", CRITIQUE_TASK.format(case=trajectory.id)))
    rec.prompts.append(_dump(second))
    rec.call_count = 2
    try:
        rec.responses.append(backend.complete(second, p).text)
    except BackendError as exc:
        return _finish(_fail(rec, "critique", exc), started)
    return _finish(rec, started)
