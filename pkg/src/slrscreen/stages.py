"""Agent stages: the single-agent quality-control filter and the dual-agent
screening/relevance phases.

Conflicts between the two agents go through a bounded dialogue: in each round
the agent currently voting Exclude challenges first, the other defends, and
both may revise. Three rounds without agreement resolve to Include, because a
wrongly kept record costs reviewer minutes while a wrongly dropped one is
unrecoverable.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .gateway import VERDICT_SCHEMA, GatewayError, Message, ModelRef, VerdictPayload, complete
from .records import Label, Record

logger = logging.getLogger(__name__)

MAX_DIALOGUE_ROUNDS = 3

ASSISTANT = "assistant"
EVALUATOR = "evaluator"
QC = "qc"

MECH_SINGLE_AGENT = "single_agent"
MECH_UNANIMOUS = "unanimous"
MECH_DIALOGUE_AGREEMENT = "dialogue_agreement"
MECH_INCLUSION_DEFAULT = "inclusion_default"

FLAG_NEEDS_VERIFICATION = "needs_human_verification"

PHASE_STAGES = ("quality_control", "screening", "relevance")
DUAL_STAGES = ("screening", "relevance")

VERDICT_INSTRUCTION = (
    'Reply as JSON: {"label": "Include" or "Exclude", "reasoning": "...", '
    '"confidence": 0.0 to 1.0}.'
)


class GateError(Exception):
    """A phase was constructed against prompts the reviewer has not approved."""


class ModelDistinctnessError(Exception):
    """Assistant and Evaluator resolve to the same model without a waiver."""


class ParkedError(Exception):
    """A gateway failure mid-record; carries whatever dialogue happened so
    the parked ledger preserves the partial transcript."""

    def __init__(self, reason: str, rounds: tuple = ()):
        self.reason = reason
        self.rounds = rounds
        super().__init__(reason)


def exchange_ref(stage: str, record_id: str, role: str, slot: str) -> str:
    return f"{stage}:{record_id}:{role}:{slot}"


@dataclass(frozen=True)
class AgentDecision:
    role: str  # assistant | evaluator | qc
    model: str
    verdict: VerdictPayload
    exchange_ref: str

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "model": self.model,
            "verdict": self.verdict.to_dict(),
            "exchange_ref": self.exchange_ref,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AgentDecision":
        return cls(
            role=data["role"],
            model=data["model"],
            verdict=VerdictPayload.from_dict(data["verdict"]),
            exchange_ref=data["exchange_ref"],
        )


@dataclass(frozen=True)
class DialogueRound:
    challenger: str  # role holding Exclude at round start
    challenger_ref: str
    challenger_message: str
    defender: str
    defender_ref: str
    defender_message: str
    labels: tuple  # (assistant label, evaluator label) after both spoke

    def to_dict(self) -> dict:
        return {
            "challenger": self.challenger,
            "challenger_ref": self.challenger_ref,
            "challenger_message": self.challenger_message,
            "defender": self.defender,
            "defender_ref": self.defender_ref,
            "defender_message": self.defender_message,
            "labels": [label.value for label in self.labels],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DialogueRound":
        return cls(
            challenger=data["challenger"],
            challenger_ref=data["challenger_ref"],
            challenger_message=data["challenger_message"],
            defender=data["defender"],
            defender_ref=data["defender_ref"],
            defender_message=data["defender_message"],
            labels=tuple(Label(v) for v in data["labels"]),
        )


@dataclass(frozen=True)
class DialogueTranscript:
    record_id: str
    rounds: tuple
    resolution: dict  # {"kind": "agreement", "label", "round"} | {"kind": "inclusion_default"}

    def __post_init__(self):
        if not 1 <= len(self.rounds) <= MAX_DIALOGUE_ROUNDS:
            raise ValueError("dialogue must have between 1 and 3 rounds")
        kind = self.resolution.get("kind")
        final = self.rounds[-1].labels
        if kind == "agreement":
            if self.resolution["round"] != len(self.rounds):
                raise ValueError("agreement round does not match transcript length")
            if final[0] != final[1] or final[0].value != self.resolution["label"]:
                raise ValueError("agreement resolution contradicts final round labels")
        elif kind == "inclusion_default":
            if len(self.rounds) != MAX_DIALOGUE_ROUNDS:
                raise ValueError("inclusion default requires all three rounds")
            if final[0] == final[1]:
                raise ValueError("inclusion default with agreeing final labels")
        else:
            raise ValueError(f"unknown resolution kind: {kind!r}")

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "rounds": [r.to_dict() for r in self.rounds],
            "resolution": dict(self.resolution),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DialogueTranscript":
        return cls(
            record_id=data["record_id"],
            rounds=tuple(DialogueRound.from_dict(r) for r in data["rounds"]),
            resolution=data["resolution"],
        )


@dataclass(frozen=True)
class StageOutcome:
    record_id: str
    stage: str
    label: Label
    mechanism: str
    decisions: tuple
    round: Optional[int] = None
    transcript: Optional[DialogueTranscript] = None
    flags: tuple = ()

    def __post_init__(self):
        if self.mechanism == MECH_SINGLE_AGENT:
            if self.stage != "quality_control":
                raise ValueError("single-agent outcomes exist only in quality control")
            if len(self.decisions) != 1 or self.transcript is not None:
                raise ValueError("single-agent outcome must have one decision, no dialogue")
        elif self.mechanism == MECH_UNANIMOUS:
            if len(self.decisions) != 2 or self.transcript is not None:
                raise ValueError("unanimous outcome must have two decisions, no dialogue")
            labels = {d.verdict.label for d in self.decisions}
            if labels != {self.label}:
                raise ValueError("unanimous outcome label must match both decisions")
        elif self.mechanism == MECH_DIALOGUE_AGREEMENT:
            if self.transcript is None or self.transcript.resolution["kind"] != "agreement":
                raise ValueError("dialogue agreement requires an agreement transcript")
            if self.round != self.transcript.resolution["round"]:
                raise ValueError("outcome round disagrees with transcript")
            if self.label.value != self.transcript.resolution["label"]:
                raise ValueError("outcome label disagrees with transcript")
        elif self.mechanism == MECH_INCLUSION_DEFAULT:
            if self.transcript is None or self.transcript.resolution["kind"] != "inclusion_default":
                raise ValueError("inclusion default requires a full disagreement transcript")
            if self.label is not Label.INCLUDE:
                raise ValueError("inclusion default must include")
        else:
            raise ValueError(f"unknown mechanism: {self.mechanism!r}")

    def refs(self) -> list:
        """Every exchange ref this outcome cites, for integrity checking."""
        refs = [d.exchange_ref for d in self.decisions]
        if self.transcript is not None:
            for r in self.transcript.rounds:
                refs.extend((r.challenger_ref, r.defender_ref))
        return refs

    def to_dict(self) -> dict:
        data = {
            "record_id": self.record_id,
            "stage": self.stage,
            "label": self.label.value,
            "mechanism": self.mechanism,
            "decisions": [d.to_dict() for d in self.decisions],
            "flags": sorted(self.flags),
        }
        if self.round is not None:
            data["round"] = self.round
        if self.transcript is not None:
            data["transcript"] = self.transcript.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "StageOutcome":
        transcript = data.get("transcript")
        return cls(
            record_id=data["record_id"],
            stage=data["stage"],
            label=Label(data["label"]),
            mechanism=data["mechanism"],
            decisions=tuple(AgentDecision.from_dict(d) for d in data["decisions"]),
            round=data.get("round"),
            transcript=DialogueTranscript.from_dict(transcript) if transcript else None,
            flags=tuple(data.get("flags", ())),
        )


@dataclass(frozen=True)
class ParkedEntry:
    record_id: str
    stage: str
    reason: str
    partial_rounds: tuple = ()

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "stage": self.stage,
            "reason": self.reason,
            "partial_rounds": [r.to_dict() for r in self.partial_rounds],
        }


def _record_block(record: Record) -> str:
    authors = ", ".join(record.authors) if record.authors else "(unknown)"
    abstract = record.abstract if record.abstract else "(no abstract available)"
    return (
        f"Title: {record.title}\n"
        f"Authors: {authors}\n"
        f"Year: {record.year}\n"
        f"Venue: {record.venue or '(unknown)'}\n"
        f"Abstract: {abstract}"
    )


def _decide(provider, model: ModelRef, prompt_text: str, record: Record,
            stage: str, role: str, slot: str, audit) -> AgentDecision:
    ref = exchange_ref(stage, record.id, role, slot)
    messages = [
        Message("system", prompt_text),
        Message("user", f"{_record_block(record)}\n\n{VERDICT_INSTRUCTION}"),
    ]
    verdict, _ = complete(
        provider, model, messages, VERDICT_SCHEMA, ref,
        audit=audit, parse=VerdictPayload.from_dict,
    )
    return AgentDecision(role=role, model=model.model, verdict=verdict, exchange_ref=ref)


def _rebuttal(provider, model: ModelRef, prompt_text: str, record: Record,
              stage: str, role: str, round_no: int,
              own_label: Label, own_reasoning: str,
              other_label: Label, other_reasoning: str, audit):
    ref = exchange_ref(stage, record.id, role, f"round{round_no}")
    user = (
        f"{_record_block(record)}\n\n"
        f"Your current classification: {own_label.value}\n"
        f"Your reasoning so far: {own_reasoning}\n\n"
        f"The other reviewer classifies this record as {other_label.value} "
        f"and argues:\n{other_reasoning}\n\n"
        "Weigh that argument, then defend or revise your classification. "
        + VERDICT_INSTRUCTION
    )
    verdict, _ = complete(
        provider, model, [Message("system", prompt_text), Message("user", user)],
        VERDICT_SCHEMA, ref, audit=audit, parse=VerdictPayload.from_dict,
    )
    return verdict, ref


def classify_dual(record: Record, phase: str, prompt_texts: dict,
                  assistant: ModelRef, evaluator: ModelRef, provider,
                  audit=None) -> tuple:
    """Two independent classifications: neither agent's context contains the
    other's output."""
    a = _decide(provider, assistant, prompt_texts[ASSISTANT], record, phase,
                ASSISTANT, "initial", audit)
    e = _decide(provider, evaluator, prompt_texts[EVALUATOR], record, phase,
                EVALUATOR, "initial", audit)
    return a, e


def resolve_conflict(record: Record, phase: str, decisions: tuple,
                     prompt_texts: dict, models: dict, provider, audit=None,
                     max_rounds: int = MAX_DIALOGUE_ROUNDS) -> StageOutcome:
    a_dec, e_dec = decisions
    if a_dec.verdict.label == e_dec.verdict.label:
        raise ValueError("resolve_conflict requires differing labels")
    labels = {ASSISTANT: a_dec.verdict.label, EVALUATOR: e_dec.verdict.label}
    reasoning = {ASSISTANT: a_dec.verdict.reasoning, EVALUATOR: e_dec.verdict.reasoning}
    rounds = []
    try:
        for round_no in range(1, max_rounds + 1):
            # whoever votes Exclude opens: exclusion is the costly error, so
            # it carries the burden of argument
            challenger = ASSISTANT if labels[ASSISTANT] is Label.EXCLUDE else EVALUATOR
            defender = EVALUATOR if challenger == ASSISTANT else ASSISTANT

            c_verdict, c_ref = _rebuttal(
                provider, models[challenger], prompt_texts[challenger], record,
                phase, challenger, round_no,
                labels[challenger], reasoning[challenger],
                labels[defender], reasoning[defender], audit,
            )
            labels[challenger] = c_verdict.label
            reasoning[challenger] = c_verdict.reasoning

            d_verdict, d_ref = _rebuttal(
                provider, models[defender], prompt_texts[defender], record,
                phase, defender, round_no,
                labels[defender], reasoning[defender],
                labels[challenger], reasoning[challenger], audit,
            )
            labels[defender] = d_verdict.label
            reasoning[defender] = d_verdict.reasoning

            rounds.append(DialogueRound(
                challenger=challenger,
                challenger_ref=c_ref,
                challenger_message=c_verdict.reasoning,
                defender=defender,
                defender_ref=d_ref,
                defender_message=d_verdict.reasoning,
                labels=(labels[ASSISTANT], labels[EVALUATOR]),
            ))
            if labels[ASSISTANT] == labels[EVALUATOR]:
                agreed = labels[ASSISTANT]
                transcript = DialogueTranscript(
                    record_id=record.id,
                    rounds=tuple(rounds),
                    resolution={"kind": "agreement", "label": agreed.value, "round": round_no},
                )
                return StageOutcome(
                    record_id=record.id, stage=phase, label=agreed,
                    mechanism=MECH_DIALOGUE_AGREEMENT, decisions=decisions,
                    round=round_no, transcript=transcript,
                )
    except GatewayError as exc:
        raise ParkedError(f"{type(exc).__name__}: {exc}", rounds=tuple(rounds))

    transcript = DialogueTranscript(
        record_id=record.id, rounds=tuple(rounds),
        resolution={"kind": "inclusion_default"},
    )
    return StageOutcome(
        record_id=record.id, stage=phase, label=Label.INCLUDE,
        mechanism=MECH_INCLUSION_DEFAULT, decisions=decisions,
        transcript=transcript,
    )


def _run_engine(records: list, work, stage: str, concurrency: int,
                done_ids, sink) -> tuple:
    """Run work over records with bounded lookahead, emitting outcomes in
    record-id order. The bounded window keeps the set of called-but-unpersisted
    records (the redial exposure after a crash) at most the concurrency limit.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    ordered = sorted(records, key=lambda r: r.id)
    ids = [r.id for r in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate record ids in stage input")
    todo = [r for r in ordered if r.id not in done_ids]
    outcomes: list = []
    parked: list = []
    if not todo:
        return outcomes, parked

    def guarded(record):
        try:
            return work(record)
        except ParkedError as exc:
            return ParkedEntry(record.id, stage, exc.reason, exc.rounds)
        except GatewayError as exc:
            return ParkedEntry(record.id, stage, f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = {}
        next_submit = 0
        for i in range(len(todo)):
            while next_submit < len(todo) and next_submit < i + concurrency:
                futures[next_submit] = pool.submit(guarded, todo[next_submit])
                next_submit += 1
            result = futures.pop(i).result()
            if isinstance(result, ParkedEntry):
                parked.append(result)
            else:
                outcomes.append(result)
                if sink is not None:
                    sink.write(result.to_dict())
    return outcomes, parked


def run_qc(records: list, prompt_text: str, model: ModelRef, provider,
           audit=None, concurrency: int = 1, done_ids=frozenset(),
           sink=None) -> tuple:
    """Single-agent pass flagging non-research items. An Exclude issued
    without ever seeing an abstract is queued for human verification rather
    than trusted."""

    def work(record):
        decision = _decide(provider, model, prompt_text, record,
                           "quality_control", QC, "initial", audit)
        flags = ()
        if decision.verdict.label is Label.EXCLUDE and record.abstract_provenance.kind == "missing":
            flags = (FLAG_NEEDS_VERIFICATION,)
        return StageOutcome(
            record_id=record.id, stage="quality_control",
            label=decision.verdict.label, mechanism=MECH_SINGLE_AGENT,
            decisions=(decision,), flags=flags,
        )

    return _run_engine(records, work, "quality_control", concurrency, done_ids, sink)


def run_phase(records: list, phase: str, prompt_texts: dict, models: dict,
              provider, audit=None, concurrency: int = 1,
              done_ids=frozenset(), sink=None,
              max_rounds: int = MAX_DIALOGUE_ROUNDS) -> tuple:
    if phase not in DUAL_STAGES:
        raise ValueError(f"not a dual-agent phase: {phase!r}")

    def work(record):
        a, e = classify_dual(record, phase, prompt_texts, models[ASSISTANT],
                             models[EVALUATOR], provider, audit)
        if a.verdict.label == e.verdict.label:
            return StageOutcome(
                record_id=record.id, stage=phase, label=a.verdict.label,
                mechanism=MECH_UNANIMOUS, decisions=(a, e),
            )
        return resolve_conflict(record, phase, (a, e), prompt_texts, models,
                                provider, audit, max_rounds)

    return _run_engine(records, work, phase, concurrency, done_ids, sink)


class PhaseRun:
    """One agent stage bound to its approved prompts and models.

    Construction is the gate: building a run against a prompt the reviewer
    has not approved raises, so no code path can reach the provider first.
    """

    def __init__(self, phase: str, prompt_set, models: dict, provider,
                 audit=None, concurrency: int = 1,
                 allow_same_models: bool = False):
        phase = getattr(phase, "value", phase)
        if phase not in PHASE_STAGES:
            raise ValueError(f"not an agent phase: {phase!r}")
        if not prompt_set.phase_eligible(phase):
            raise GateError(f"prompts for {phase} are not approved")
        self.phase = phase
        self.provider = provider
        self.audit = audit
        self.concurrency = concurrency
        if phase == "quality_control":
            self.models = {QC: models[ASSISTANT]}
            self.prompt_texts = {QC: prompt_set.get(phase, ASSISTANT).text}
        else:
            if models[ASSISTANT].model == models[EVALUATOR].model:
                if not allow_same_models:
                    raise ModelDistinctnessError(
                        f"{phase}: assistant and evaluator are both "
                        f"{models[ASSISTANT].model!r}; pass the waiver to allow this"
                    )
                logger.warning(
                    "%s: model-distinctness waiver active (both roles on %s)",
                    phase, models[ASSISTANT].model,
                )
            self.models = {ASSISTANT: models[ASSISTANT], EVALUATOR: models[EVALUATOR]}
            self.prompt_texts = {
                ASSISTANT: prompt_set.get(phase, ASSISTANT).text,
                EVALUATOR: prompt_set.get(phase, EVALUATOR).text,
            }

    def execute(self, records: list, done_ids=frozenset(), sink=None) -> tuple:
        if self.phase == "quality_control":
            return run_qc(records, self.prompt_texts[QC], self.models[QC],
                          self.provider, self.audit, self.concurrency,
                          done_ids, sink)
        return run_phase(records, self.phase, self.prompt_texts, self.models,
                         self.provider, self.audit, self.concurrency,
                         done_ids, sink)
