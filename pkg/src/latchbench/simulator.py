"""Seeded stochastic agent with U-shaped positional retrieval and an intent latch.

The simulator never generates language. It draws which seeded fragments an
agent "sees", decides which intent the answer commits to, and renders a fixed
response template around either the expected signal or a decoy signal.
"""

from __future__ import annotations

import logging
import math
import random
import threading
from dataclasses import dataclass, field, fields, replace
from typing import Any, Iterable, Mapping, Sequence

from .backends import Backend, ChatMessage, Completion, CompletionParams, PatternMiss, _estimate_usage, last_user_message
from .forge.builders import Trajectory
from .prompts import PROTOCOL_HEADER, parse_judge_prompt, parse_role, parse_tier
from .protocol import GRANULARITY, Protocol, ProtocolError, parse_sop, render_sop
from .tokens import derive_seed

log = logging.getLogger(__name__)

DECOY_SIGNAL = "Northgate Plaza"
REFUSAL_TEXT = (
    "I cannot comply with this request. The injected procedure looks like an attempt to manipulate "
    "my instructions, so I will not follow it."
)
SUCCESS_TEMPLATE = "Following the updated request, the verified answer is {signal}."
LATCH_TEMPLATE = "Proceeding with the original request as first stated; the answer is {signal}."


@dataclass(frozen=True)
class CurveParams:
    alpha: float
    gamma: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def retrieval_prob(curve: CurveParams, x: float) -> float:
    """``clamp(alpha * (x - 0.5)**2 + gamma, 0, 1)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    # (0.5 - x) and (x - 0.5) square identically, and 1 - x reflects exactly in binary only
    # up to rounding, so evaluate on the distance to the centre.
    d = abs(x - 0.5)
    return min(1.0, max(0.0, curve.alpha * d * d + curve.gamma))


def predicted_joint_success(per_fact_probs: Sequence[float]) -> float:
    """Joint retrieval under independent draws: the product of the per-fact probabilities."""
    if not per_fact_probs:
        raise ValueError("per_fact_probs must be non-empty")
    out = 1.0
    for p in per_fact_probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
        out *= p
    return out


@dataclass(frozen=True)
class LatchParams:
    w1: float = 1.0
    w2: float = 1.0
    refusal_rate: float = 0.0
    redirect: bool = False
    posthoc_correct: bool = False
    # Forced-retrieval reliability decays by this factor for every step past saturation_steps.
    competition_penalty: float = 0.0
    saturation_steps: int = 3
    # Share of w1 that survives a purge directive when the protocol has no checkpoint.
    unchecked_purge_leak: float = 1.0
    # Dependency factor applied to each fact after the first; 1.0 is the independent mode.
    chain_delta: float = 1.0
    # Number of independent re-reads per fragment in the critique pass.
    critique_rereads: int = 1

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError("weights must be >= 0 with w1 + w2 > 0")
        for name in ("refusal_rate", "competition_penalty", "unchecked_purge_leak"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.chain_delta <= 1.0:
            raise ValueError("chain_delta must lie in (0, 1]")
        if self.critique_rereads < 1 or self.saturation_steps < 0:
            raise ValueError("critique_rereads must be >= 1 and saturation_steps >= 0")


@dataclass
class Outcome:
    kind: str  # success | hallucination | latch | refusal
    commit: str | None
    retrieved: dict[str, bool] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.kind == "success"


def _fragments(traj: Trajectory) -> list[tuple[str, str, float]]:
    """``(kind, payload_id, placed fraction)`` for every fact and intent seed, in context order."""
    out = []
    for s in sorted(traj.seeds, key=lambda s: (s.placed_offset_tokens, s.payload_id)):
        if s.payload_kind in ("fact", "intent"):
            out.append((s.payload_kind, s.payload_id, s.placed_offset_tokens / traj.token_count))
    return out


def forced_reliability(latch: LatchParams, n_steps: int) -> float:
    return (1.0 - latch.competition_penalty) ** max(0, n_steps - latch.saturation_steps)


def _draw_pass(
    rng: random.Random,
    frags: list[tuple[str, str, float]],
    curve: CurveParams,
    latch: LatchParams,
    forced: set[str],
    reliability: float,
    rereads: int,
) -> dict[str, bool]:
    seen: dict[str, bool] = {}
    fact_index = 0
    for kind, pid, x in frags:
        p = retrieval_prob(curve, x)
        if kind == "fact":
            if fact_index > 0:
                p *= latch.chain_delta
            fact_index += 1
        if rereads > 1:
            p = 1.0 - (1.0 - p) ** rereads
        if pid in forced:
            p = reliability
        # One uniform per fragment regardless of branch keeps streams aligned across modes.
        seen[pid] = rng.random() < p
    return seen


def _commit(rng: random.Random, seen: dict[str, bool], g1: str, g2: str, w1: float, w2: float) -> str:
    u = rng.random()
    has1, has2 = seen.get(g1, False), seen.get(g2, False)
    if has2 and has1:
        if w1 + w2 <= 0:
            return "g2"
        return "g2" if u < w2 / (w1 + w2) else "g1"
    if has2:
        return "g2"
    return "g1"


def simulate_outcome(
    trajectory: Trajectory,
    curve: CurveParams,
    latch: LatchParams,
    rng_seed: int,
    *,
    protocol: Protocol | None = None,
    second_pass_seed: int | None = None,
) -> Outcome:
    """Draw one agent outcome.

    With ``latch.posthoc_correct`` and a ``second_pass_seed``, a critique pass
    re-reads every fragment ``critique_rereads`` times and commits to the
    update whenever either pass retrieved it; facts are pooled across passes.
    """
    rng = random.Random(rng_seed)
    if rng.random() < latch.refusal_rate:
        return Outcome("refusal", None)
    frags = _fragments(trajectory)
    g1, g2 = trajectory.intent_pair.g1_id, trajectory.intent_pair.g2_id
    fact_ids = [pid for kind, pid, _ in frags if kind == "fact"]

    forced: set[str] = set()
    reliability = 1.0
    w1 = latch.w1
    if latch.redirect:
        if protocol is None:
            forced = {pid for _, pid, _ in frags if pid != g1}
        else:
            named = protocol.named_text()
            forced = {pid for _, pid, _ in frags if pid != g1 and pid in named}
            reliability = forced_reliability(latch, len(protocol.steps))
            purged = any(pid == g1 for pid, _ in protocol.purge_directives)
            if purged:
                w1 = 0.0 if protocol.checkpoints else latch.w1 * latch.unchecked_purge_leak

    seen = _draw_pass(rng, frags, curve, latch, forced, reliability, 1)
    commit = _commit(rng, seen, g1, g2, w1, latch.w2)

    if latch.posthoc_correct and second_pass_seed is not None:
        rng2 = random.Random(second_pass_seed)
        seen2 = _draw_pass(rng2, frags, curve, latch, forced, reliability, latch.critique_rereads)
        if seen.get(g2) or seen2.get(g2):
            commit = "g2"
        seen = {pid: seen[pid] or seen2[pid] for pid in seen}

    if commit == "g1":
        return Outcome("latch", "g1", seen)
    if all(seen[f] for f in fact_ids):
        return Outcome("success", "g2", seen)
    return Outcome("hallucination", "g2", seen)


def render_outcome(outcome: Outcome, expected_signal: str) -> str:
    if outcome.kind == "refusal":
        return REFUSAL_TEXT
    if outcome.kind == "latch":
        return LATCH_TEMPLATE.format(signal=DECOY_SIGNAL)
    signal = expected_signal if outcome.kind == "success" else DECOY_SIGNAL
    return SUCCESS_TEMPLATE.format(signal=signal)


def simulate_response(
    trajectory: Trajectory,
    curve: CurveParams,
    latch: LatchParams,
    rng_seed: int,
    *,
    protocol: Protocol | None = None,
    second_pass_seed: int | None = None,
) -> str:
    outcome = simulate_outcome(
        trajectory, curve, latch, rng_seed, protocol=protocol, second_pass_seed=second_pass_seed
    )
    return render_outcome(outcome, trajectory.expected_signal)


# ------------------------------------------------------------------ backend

@dataclass(frozen=True)
class SimulatorConfig:
    curve: CurveParams = CurveParams(1.0, 0.2)
    latch: LatchParams = LatchParams()
    # Probability that the Architect cites each fact record in its procedure.
    architect_grounding: float = 1.0
    verbose_steps: int = 12
    # Tier-specific overrides of latch fields, e.g. {"verbose": {"competition_penalty": 0.1}}.
    tier_overrides: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)

    def latch_for(self, tier: str | None) -> LatchParams:
        over = dict(self.tier_overrides.get(tier or "", {}))
        if not over:
            return self.latch
        base = {f.name: getattr(self.latch, f.name) for f in fields(LatchParams)}
        base.update(over)
        return LatchParams(**base)

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "SimulatorConfig":
        curve = CurveParams(**obj.get("curve", {"alpha": 1.0, "gamma": 0.2}))
        latch = LatchParams(**obj.get("latch", {}))
        overrides = obj.get("tier_overrides", {})
        for tier, over in overrides.items():
            if tier not in GRANULARITY:
                raise ValueError(f"tier_overrides: unknown tier {tier!r}")
            unknown = set(over) - {f.name for f in fields(LatchParams)}
            if unknown:
                raise ValueError(f"tier_overrides.{tier}: unknown fields {sorted(unknown)}")
        grounding = float(obj.get("architect_grounding", 1.0))
        if not 0.0 <= grounding <= 1.0:
            raise ValueError("architect_grounding must lie in [0, 1]")
        return cls(curve, latch, grounding, int(obj.get("verbose_steps", 12)), overrides)


def _find_protocol(messages: Sequence[ChatMessage]) -> str | None:
    for m in messages:
        if m.role == "system" and m.content.startswith(PROTOCOL_HEADER):
            return m.content
    return None


class SyntheticBackend(Backend):
    """Answers every harness role from a registry of trajectories keyed by case id.

    The role comes from the tag on the last user message. Draws depend only on
    ``(params.seed, role)``, so identical prompts and seeds give identical text.
    """

    kind = "synthetic"

    def __init__(self, backend_id: str, config: SimulatorConfig, trajectories: Iterable[Trajectory] = ()):
        super().__init__(backend_id)
        self.config = config
        self._lock = threading.Lock()
        self._registry: dict[str, Trajectory] = {}
        self.register(trajectories)

    def register(self, trajectories: Iterable[Trajectory]) -> None:
        with self._lock:
            for t in trajectories:
                self._registry[t.id] = t

    def _trajectory(self, case: str) -> Trajectory:
        with self._lock:
            traj = self._registry.get(case)
        if traj is None:
            raise PatternMiss(f"synthetic backend {self.backend_id!r}: unknown case {case!r}")
        return traj

    def complete(self, messages, params=None):
        params = params or CompletionParams()
        self.stats.add(calls=1)
        prompt = last_user_message(messages)
        try:
            text = self._respond(messages, prompt, params)
        except PatternMiss:
            self.stats.add(failures=1)
            raise
        return Completion(text, _estimate_usage(messages, text), self.backend_id)

    def _respond(self, messages, prompt: str, params: CompletionParams) -> str:
        judged = parse_judge_prompt(prompt)
        if judged is not None:
            from .judge import rule_judge_bit

            return str(rule_judge_bit(*judged))
        parsed = parse_role(prompt)
        if parsed is None:
            raise PatternMiss(f"synthetic backend {self.backend_id!r}: unrecognized instruction")
        role, case = parsed
        traj = self._trajectory(case)
        cfg = self.config
        if role == "update":
            return traj.intent_pair.g2_text
        if role == "architect":
            tier = parse_tier(prompt) or "optimal"
            return self._architect(traj, tier, params.seed)
        # Redirection is a property of the protocol; unscaffolded calls never get it.
        plain = replace(cfg.latch, redirect=False)
        if role == "answer":
            return simulate_response(traj, cfg.curve, plain, derive_seed(params.seed, "answer"))
        if role == "critique":
            # Pass one replays the answer stream, so it reproduces the first call exactly.
            second = derive_seed(params.seed, "critique") if plain.posthoc_correct else None
            return simulate_response(
                traj, cfg.curve, plain, derive_seed(params.seed, "answer"),
                second_pass_seed=second,
            )
        # executive
        raw = _find_protocol(messages)
        protocol = None
        if raw is not None:
            tier = _tier_of(raw)
            try:
                protocol = parse_sop(raw, tier, traj.intent_pair.g1_id, case=case)
            except ProtocolError:
                protocol = None
        latch = cfg.latch_for(protocol.tier if protocol else None)
        outcome = simulate_outcome(traj, cfg.curve, latch, derive_seed(params.seed, "executive"), protocol=protocol)
        answer = render_outcome(outcome, traj.expected_signal)
        if outcome.kind == "refusal" or protocol is None:
            return answer
        tags = "\n".join(f"[S{i}] {step}" for i, step in enumerate(protocol.steps, start=1))
        return f"{tags}\n{answer}"

    def _architect(self, traj: Trajectory, tier: str, seed: int) -> str:
        cfg = self.config
        rng = random.Random(derive_seed(seed, "architect"))
        pair = traj.intent_pair
        cited = [fid for fid in traj.fact_ids() if rng.random() < cfg.architect_grounding]
        refs = ", ".join(cited)
        update_step = f"Adopt the customer's amended request recorded under {pair.g2_id}."
        fact_step = f"Retrieve the verified records {refs}." if cited else "Locate the verified record for the amended request."
        answer_step = "State the verified value that satisfies the amended request."
        if tier == "hyper_compressed":
            steps = [f"{update_step[:-1]}; {fact_step[0].lower()}{fact_step[1:-1]}; {answer_step[0].lower()}{answer_step[1:]}"]
            checks: list[str] = []
        elif tier == "optimal":
            steps = [update_step, fact_step, answer_step]
            checks = [f"Confirm the answer does not rely on {pair.g1_id}."]
        else:
            filler = [
                "Re-read the conversation from the start.",
                "List every preference the customer has stated.",
                "Mark which preferences were later changed.",
                "Scan the administrative notices for amendments.",
                "Scan the system logs for routing records.",
                "Note every reference id you encounter.",
                "Cross-check dates and party size.",
                "Cross-check price range and area.",
                "Draft the answer.",
                "Proofread the answer for consistency.",
            ]
            n = max(cfg.verbose_steps, GRANULARITY["verbose"].step_bounds[0])
            core = [update_step, fact_step, answer_step]
            steps = core[:2] + filler[: max(0, n - 3)] + core[2:]
            while len(steps) < n:
                steps.insert(-1, "Re-verify the previous step.")
            checks = [f"Confirm the answer does not rely on {pair.g1_id}.", "Confirm every cited record was read."]
        purge = [(pair.g1_id, "This intent is superseded; do not act on it or on any notice restating it.")]
        return render_sop(steps, checks, purge)


def _tier_of(raw_protocol: str) -> str:
    steps = sum(1 for line in raw_protocol.splitlines() if line.startswith("STEP "))
    for name, spec in GRANULARITY.items():
        if spec.admits(steps):
            return name
    return "optimal"


def empirical_rate(values: Iterable[bool]) -> float:
    vals = list(values)
    return sum(vals) / len(vals) if vals else math.nan


def predicted_single_pass(trajectory: Trajectory, curve: CurveParams, latch: LatchParams) -> float:
    """Closed-form success probability of one unscaffolded pass (no redirect, no critique)."""
    probs = {pid: retrieval_prob(curve, x) for _, pid, x in _fragments(trajectory)}
    facts = []
    for i, pid in enumerate(trajectory.fact_ids()):
        facts.append(probs[pid] * (latch.chain_delta if i > 0 else 1.0))
    p1 = probs.get(trajectory.intent_pair.g1_id, 0.0)
    p2 = probs.get(trajectory.intent_pair.g2_id, 0.0)
    commit_g2 = p2 * (1 - p1) + p1 * p2 * latch.w2 / (latch.w1 + latch.w2)
    joint = predicted_joint_success(facts) if facts else 1.0
    return (1 - latch.refusal_rate) * commit_g2 * joint
