"""Task-prompt generation with an Assistant/Evaluator critique loop and a
human approval gate per prompt. No agent stage may run until its prompts are
approved by a reviewer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .gateway import ChatExchange, Message, ModelRef, complete
from .records import CriteriaSet

MAX_ITERATIONS = 3

# the two dual-agent phases need one prompt per role; QC runs a single agent
REQUIRED_KEYS = (
    ("screening", "assistant"),
    ("screening", "evaluator"),
    ("relevance", "assistant"),
    ("relevance", "evaluator"),
)
QC_KEY = ("quality_control", "assistant")

DRAFT_SCHEMA = {
    "type": "object",
    "properties": {"prompt": {"type": "string", "minLength": 1}},
    "required": ["prompt"],
}

CRITIQUE_SCHEMA = {
    "type": "object",
    "properties": {
        "approved": {"type": "boolean"},
        "critique": {"type": "string"},
    },
    "required": ["approved"],
}


@dataclass(frozen=True)
class ReviewBrief:
    """What the human reviewer supplies: why the review exists, what it asks,
    and the criteria agents will apply."""

    purpose: str
    research_questions: tuple
    criteria: CriteriaSet
    domain_definition: str = ""
    cimo: Optional[dict] = None  # context/intervention/mechanism/outcome

    def __post_init__(self):
        if not self.purpose.strip():
            raise ValueError("purpose must be non-empty")
        questions = [q for q in self.research_questions if q.strip()]
        if not questions:
            raise ValueError("at least one research question required")

    def to_dict(self) -> dict:
        return {
            "purpose": self.purpose,
            "research_questions": list(self.research_questions),
            "criteria": self.criteria.to_dict(),
            "domain_definition": self.domain_definition,
            "cimo": self.cimo,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReviewBrief":
        return cls(
            purpose=data["purpose"],
            research_questions=tuple(data["research_questions"]),
            criteria=CriteriaSet.from_dict(data["criteria"]),
            domain_definition=data.get("domain_definition", ""),
            cimo=data.get("cimo"),
        )


class ApprovalConflict(ValueError):
    """The entry cannot take this decision in its current state."""


@dataclass(frozen=True)
class Approval:
    state: str  # "draft" | "approved" | "rejected"
    reviewer: str = ""
    note: str = ""
    at: str = ""

    STATES = ("draft", "approved", "rejected")

    def __post_init__(self):
        if self.state not in self.STATES:
            raise ValueError(f"unknown approval state: {self.state!r}")

    def to_dict(self) -> dict:
        return {"state": self.state, "reviewer": self.reviewer, "note": self.note, "at": self.at}

    @classmethod
    def from_dict(cls, data: dict) -> "Approval":
        return cls(**data)


DRAFT = Approval("draft")


@dataclass(frozen=True)
class PromptEntry:
    phase: str
    role: str
    text: str
    transcript: tuple = ()  # ChatExchange list, generation order
    approval: Approval = DRAFT

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "role": self.role,
            "text": self.text,
            "transcript": [e.to_dict() for e in self.transcript],
            "approval": self.approval.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PromptEntry":
        return cls(
            phase=data["phase"],
            role=data["role"],
            text=data["text"],
            transcript=tuple(ChatExchange.from_dict(e) for e in data["transcript"]),
            approval=Approval.from_dict(data["approval"]),
        )


@dataclass
class PromptSet:
    entries: dict = field(default_factory=dict)  # (phase, role) -> PromptEntry

    def is_complete(self) -> bool:
        return all(key in self.entries for key in REQUIRED_KEYS)

    def get(self, phase: str, role: str) -> Optional[PromptEntry]:
        return self.entries.get((phase, role))

    def phase_eligible(self, phase: str) -> bool:
        """A phase may run only when every one of its prompts is approved."""
        if phase == "quality_control":
            keys = [QC_KEY]
        else:
            keys = [k for k in REQUIRED_KEYS if k[0] == phase]
        if not keys:
            return False
        return all(
            key in self.entries and self.entries[key].approval.state == "approved"
            for key in keys
        )

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for _, e in sorted(self.entries.items())]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "PromptSet":
        entries = {}
        for raw in data["entries"]:
            entry = PromptEntry.from_dict(raw)
            entries[(entry.phase, entry.role)] = entry
        return cls(entries=entries)


def _phase_blurb(phase: str) -> str:
    return {
        "screening": "decide whether each record meets the inclusion criteria "
        "based on its title and abstract",
        "relevance": "judge whether each already-screened record actually helps "
        "answer the research questions",
        "quality_control": "filter out items that are not research publications "
        "(prefaces, tables of contents, editorials, generic chapters)",
    }[phase]


def _role_blurb(role: str) -> str:
    if role == "assistant":
        return "the Assistant, who classifies records"
    return "the Evaluator, who independently classifies records and challenges the Assistant"


def _brief_summary(brief: ReviewBrief, phase: str) -> str:
    lines = [f"Review purpose: {brief.purpose}", "Research questions:"]
    lines += [f"  {i + 1}. {q}" for i, q in enumerate(brief.research_questions)]
    agent_criteria = [c for c in brief.criteria.criteria if c.phase != "pre_filtered"]
    if agent_criteria:
        lines.append("Criteria:")
        lines += [f"  ({c.id}) {c.text}" for c in agent_criteria]
    if brief.domain_definition:
        lines.append(f"Domain definition: {brief.domain_definition}")
    if brief.cimo:
        lines.append(
            "CIMO: context=%(context)s; intervention=%(intervention)s; "
            "mechanism=%(mechanism)s; outcome=%(outcome)s" % brief.cimo
        )
    lines.append(f"Target task: {_phase_blurb(phase)}.")
    return "\n".join(lines)


def _generate_entry(
    brief: ReviewBrief,
    phase: str,
    role: str,
    assistant: ModelRef,
    evaluator: ModelRef,
    provider,
    audit=None,
    max_iterations: int = MAX_ITERATIONS,
) -> PromptEntry:
    summary = _brief_summary(brief, phase)
    transcript = []
    draft_messages = [
        Message(
            "system",
            "You write task prompts for review agents. Reply as JSON: "
            '{"prompt": "..."}.',
        ),
        Message(
            "user",
            f"Write the system prompt for {_role_blurb(role)} in the {phase} phase.\n"
            f"{summary}",
        ),
    ]
    text = ""
    for iteration in range(1, max_iterations + 1):
        payload, exchange = complete(
            provider,
            assistant,
            draft_messages,
            DRAFT_SCHEMA,
            f"prompts:{phase}:{role}:draft{iteration}",
            audit=audit,
        )
        text = payload["prompt"]
        transcript.append(exchange)

        critique_messages = [
            Message(
                "system",
                "You evaluate a proposed agent prompt for clarity, coverage of the "
                'criteria, and bias. Reply as JSON: {"approved": true/false, '
                '"critique": "..."}.',
            ),
            Message("user", f"{summary}\n\nProposed prompt:\n{text}"),
        ]
        verdict, exchange = complete(
            provider,
            evaluator,
            critique_messages,
            CRITIQUE_SCHEMA,
            f"prompts:{phase}:{role}:critique{iteration}",
            audit=audit,
        )
        transcript.append(exchange)
        if verdict["approved"]:
            break
        draft_messages = draft_messages + [
            Message("agent", json.dumps({"prompt": text})),
            Message(
                "user",
                "The evaluator was not satisfied: "
                f"{verdict.get('critique', '(no detail)')}\nRevise the prompt. "
                'Reply as JSON: {"prompt": "..."}.',
            ),
        ]
    return PromptEntry(phase=phase, role=role, text=text, transcript=tuple(transcript))


def generate_prompts(
    brief: ReviewBrief,
    assistant: ModelRef,
    evaluator: ModelRef,
    provider,
    audit=None,
    max_iterations: int = MAX_ITERATIONS,
    include_qc: bool = True,
) -> PromptSet:
    """Draft all task prompts via the generate/critique/revise loop. Every
    returned entry is in Draft state awaiting a human decision."""
    if max_iterations < 1:
        raise ValueError("max iterations must be >= 1")
    keys = list(REQUIRED_KEYS) + ([QC_KEY] if include_qc else [])
    prompt_set = PromptSet()
    for phase, role in keys:
        prompt_set.entries[(phase, role)] = _generate_entry(
            brief, phase, role, assistant, evaluator, provider, audit, max_iterations
        )
    return prompt_set


def regenerate_entry(
    prompt_set: PromptSet,
    key: tuple,
    brief: ReviewBrief,
    assistant: ModelRef,
    evaluator: ModelRef,
    provider,
    audit=None,
    max_iterations: int = MAX_ITERATIONS,
) -> PromptSet:
    """Redo the generation cycle for one rejected entry, leaving the rest."""
    entry = prompt_set.entries.get(tuple(key))
    if entry is None:
        raise KeyError(f"no prompt entry for {key}")
    if entry.approval.state != "rejected":
        raise ValueError("only rejected entries may be regenerated")
    phase, role = key
    prompt_set.entries[tuple(key)] = _generate_entry(
        brief, phase, role, assistant, evaluator, provider, audit, max_iterations
    )
    return prompt_set


def gate_approval(
    prompt_set: PromptSet,
    key: tuple,
    decision: str,
    reviewer: str = "",
    note: str = "",
    at: str = "",
) -> PromptSet:
    """Apply the human reviewer's decision to one prompt entry.

    Only Draft or Rejected entries accept a decision; approving twice is an
    error, not an idempotent no-op, because it would mask double submissions.
    """
    key = tuple(key)
    entry = prompt_set.entries.get(key)
    if entry is None:
        raise KeyError(f"no prompt entry for {key}")
    if entry.approval.state == "approved":
        raise ApprovalConflict(f"prompt {key} is already approved")
    if decision == "approved":
        if not reviewer:
            raise ValueError("approval requires a reviewer id")
        approval = Approval("approved", reviewer=reviewer, at=at)
    elif decision == "rejected":
        approval = Approval("rejected", note=note, at=at)
    else:
        raise ValueError(f"unknown decision: {decision!r}")
    prompt_set.entries[key] = replace(entry, approval=approval)
    return prompt_set
