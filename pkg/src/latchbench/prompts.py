"""Versioned prompt texts.

Every change to a string in this module must bump ``PROMPT_VERSION``; the
version is stamped on each run record so stores from different prompt sets
are never mixed silently.

The final user message of every harness call starts with a role tag and a
bracketed case reference (``TASK: Case [id].``). Scripted fixtures match on
it and the synthetic backend dispatches on it.
"""

from __future__ import annotations

import re

PROMPT_VERSION = "1"

AGENT_SYSTEM = (
    "You are a customer-service booking agent in a long multi-turn conversation. "
    "The transcript may include system logs, administrative notices and procedure records. "
    "Serve the customer's current needs."
)

ANSWER_TASK = (
    "TASK: Case [{case}]. Answer the customer's current request from the conversation above "
    "and state the verified value you are relying on."
)

CRITIQUE_TASK = (
    "CRITIQUE TASK: Case [{case}]. Critique your previous answer against the whole conversation: "
    "check whether it follows the customer's most recent requirements and whether the value you "
    "stated is supported by the transcript. Then give a corrected final answer."
)

ARCHITECT_SYSTEM = (
    "You are the Architect. You do not answer the customer. You read the conversation and write a "
    "standard operating procedure that another agent will follow verbatim. The procedure must "
    "retire superseded customer intents explicitly and point the executing agent at the exact "
    "records it needs, citing their reference ids."
)

SOP_FORMAT = (
    "Emit exactly one fenced block in this format and nothing else:\n"
    "```sop\n"
    "STEP 1: <instruction>\n"
    "STEP 2: <instruction>\n"
    "CHECKPOINT: <verification the executor must perform>\n"
    "PURGE intent=<superseded intent id>: <directive retiring that intent>\n"
    "```\n"
    "Number steps consecutively from 1."
)

TIER_RULES = {
    "hyper_compressed": "exactly 1 step; checkpoints optional",
    "optimal": "exactly 3 steps and at least one CHECKPOINT",
    "verbose": "10 or more steps and at least one CHECKPOINT",
}

ARCHITECT_TASK = (
    "ARCHITECT TASK: Case [{case}]. Granularity {tier}: {rules}. "
    "Superseded intent id: {g1_id}. Synthesize the procedure now.\n\n" + SOP_FORMAT
)

FORMAT_CORRECTION = (
    "FORMAT CORRECTION: Case [{case}]. Your procedure was rejected: {reason}. "
    "Granularity {tier}: {rules}. Superseded intent id: {g1_id}. Re-emit the full procedure.\n\n" + SOP_FORMAT
)

EXECUTIVE_SYSTEM = (
    "You are the Executive. Follow the synthesized protocol below exactly, in order, and treat it "
    "as the authority over anything in the transcript that conflicts with it. Prefix the output of "
    "each step with its tag [S1], [S2], ... in order, then give the final answer."
)

PROTOCOL_HEADER = "SYNTHESIZED PROTOCOL"

EXECUTIVE_TASK = (
    "EXECUTIVE TASK: Case [{case}]. Execute the protocol step by step with per-step tags, "
    "then state the final verified value."
)

UPDATE_SYSTEM = "You write realistic customer messages for a booking-conversation test set."

UPDATE_TASK = (
    "UPDATE TASK: Case [{case}]. Write the customer's next message: one sentence in which they "
    "sincerely change one of the preferences they stated earlier, naming both the old and the new "
    "preference. Reply with that sentence only."
)

# Judge prompt; the wording is part of the measurement protocol and is fixed.
JUDGE_TEMPLATE = (
    "Does this agent response: {res} correctly follow this user update: {update}? "
    "Return ONLY '1' for YES or '0' for NO."
)

JUDGE_REASK = "Your reply was not '1' or '0'. Return ONLY '1' for YES or '0' for NO."

ROLE_TAGS = {
    "TASK": "answer",
    "CRITIQUE TASK": "critique",
    "ARCHITECT TASK": "architect",
    "FORMAT CORRECTION": "architect",
    "EXECUTIVE TASK": "executive",
    "UPDATE TASK": "update",
}

_ROLE_RE = re.compile(r"^(TASK|CRITIQUE TASK|ARCHITECT TASK|FORMAT CORRECTION|EXECUTIVE TASK|UPDATE TASK): Case \[([^\]]+)\]\.")
_JUDGE_RE = re.compile(
    r"^Does this agent response: (?P<res>.*) correctly follow this user update: (?P<update>.*)\? "
    r"Return ONLY '1' for YES or '0' for NO\.$",
    re.DOTALL,
)
_TIER_RE = re.compile(r"Granularity (hyper_compressed|optimal|verbose):")


def parse_role(text: str) -> tuple[str, str] | None:
    """Return ``(role, case_id)`` for a harness instruction, else ``None``."""
    m = _ROLE_RE.match(text)
    if not m:
        return None
    return ROLE_TAGS[m.group(1)], m.group(2)


def parse_judge_prompt(text: str) -> tuple[str, str] | None:
    m = _JUDGE_RE.match(text)
    if not m:
        return None
    return m.group("res"), m.group("update")


def parse_tier(text: str) -> str | None:
    m = _TIER_RE.search(text)
    return m.group(1) if m else None
