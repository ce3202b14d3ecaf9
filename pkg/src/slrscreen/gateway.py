"""Uniform chat-completion access: structured JSON outputs with corrective
retries, usage accounting, and offline providers (scripted and cassette) so
every pipeline path can run with zero network."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx
import jsonschema

from .records import Label, parse_label

MAX_RETRIES = 2  # corrective retries; total attempts = MAX_RETRIES + 1

CORRECTIVE_MESSAGE = (
    "Your previous output was not valid. Emit only the required JSON object, "
    "with no surrounding prose or code fences."
)

ROLES = ("system", "user", "agent")


class GatewayError(Exception):
    pass


class TransportFailed(GatewayError):
    def __init__(self, scenario: str, detail: str):
        self.scenario = scenario
        super().__init__(f"{scenario}: transport failed after retries: {detail}")


class SchemaViolation(GatewayError):
    """Model kept answering outside the schema; carries every raw response
    for the audit trail."""

    def __init__(self, scenario: str, raw_responses: list):
        self.scenario = scenario
        self.raw_responses = list(raw_responses)
        super().__init__(
            f"{scenario}: response failed schema validation after "
            f"{len(raw_responses)} attempts"
        )


class UnknownScenario(GatewayError):
    def __init__(self, scenario: str):
        self.scenario = scenario
        super().__init__(f"no scripted responses for scenario {scenario!r}")


class ScriptExhausted(GatewayError):
    def __init__(self, scenario: str):
        self.scenario = scenario
        super().__init__(f"scripted responses exhausted for scenario {scenario!r}")


@dataclass(frozen=True)
class ModelRef:
    endpoint: str
    model: str
    temperature: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.model:
            raise ValueError("model name must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown message role: {self.role!r}")


@dataclass(frozen=True)
class ChatExchange:
    """One gateway call: the full prompt, the final response, and accounting.

    ref is the caller's stable scenario id; identical inputs produce identical
    refs across runs, which is what makes cassette replay and crash-resume
    auditing possible.
    """

    ref: str
    model: str
    messages: tuple
    response: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float
    attempts: int
    error: Optional[str] = None

    def __post_init__(self):
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")
        if self.attempts > MAX_RETRIES + 1:
            raise ValueError("attempts exceed the retry budget")

    def to_dict(self) -> dict:
        data = {
            "ref": self.ref,
            "model": self.model,
            "messages": [[m.role, m.content] for m in self.messages],
            "response": self.response,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency_ms": self.latency_ms,
            "attempts": self.attempts,
        }
        if self.error:
            data["error"] = self.error
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ChatExchange":
        return cls(
            ref=data["ref"],
            model=data["model"],
            messages=tuple(Message(r, c) for r, c in data["messages"]),
            response=data["response"],
            prompt_tokens=data["prompt_tokens"],
            completion_tokens=data["completion_tokens"],
            latency_ms=data["latency_ms"],
            attempts=data["attempts"],
            error=data.get("error"),
        )


VERDICT_SCHEMA = {
    "type": "object",
    "properties": {
        "label": {"type": "string"},
        "reasoning": {"type": "string", "minLength": 1},
        "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        "criteria_verdicts": {"type": "object", "additionalProperties": {"type": "boolean"}},
    },
    "required": ["label", "reasoning"],
}


@dataclass(frozen=True)
class VerdictPayload:
    label: Label
    reasoning: str
    confidence: Optional[float] = None
    criteria_verdicts: Optional[tuple] = None  # ((criterion id, passed), ...)

    def __post_init__(self):
        if not self.reasoning:
            raise ValueError("reasoning must be non-empty")

    @classmethod
    def from_dict(cls, data: dict) -> "VerdictPayload":
        verdicts = None
        if data.get("criteria_verdicts") is not None:
            verdicts = tuple(
                (int(k), bool(v)) for k, v in sorted(data["criteria_verdicts"].items())
            )
        return cls(
            label=parse_label(data["label"]),
            reasoning=data["reasoning"],
            confidence=data.get("confidence"),
            criteria_verdicts=verdicts,
        )

    def to_dict(self) -> dict:
        data = {"label": self.label.value, "reasoning": self.reasoning}
        if self.confidence is not None:
            data["confidence"] = self.confidence
        if self.criteria_verdicts is not None:
            data["criteria_verdicts"] = {str(k): v for k, v in self.criteria_verdicts}
        return data


def _approx_tokens(text: str) -> int:
    return len(text.split())


class ScriptedProvider:
    """Offline provider: scenario key -> ordered response list.

    Each send() pops the key's next response. Exhaustion and unknown keys are
    hard errors so fixture gaps surface instead of silently degrading. An
    optional call log file records one scenario per line (used to bound
    redial counts across interrupted runs).
    """

    def __init__(self, script: dict, call_log_path=None):
        if not script:
            raise ValueError("script must be non-empty")
        self._script = {k: list(v) for k, v in script.items()}
        self._lock = threading.Lock()
        self._call_log_path = call_log_path
        self.calls = 0

    def send(self, model: ModelRef, messages: list, scenario: str) -> tuple:
        with self._lock:
            self.calls += 1
            if self._call_log_path:
                with open(self._call_log_path, "a", encoding="utf-8") as fh:
                    fh.write(scenario + "\n")
            if scenario not in self._script:
                raise UnknownScenario(scenario)
            queue = self._script[scenario]
            if not queue:
                raise ScriptExhausted(scenario)
            response = queue.pop(0)
        prompt_tokens = sum(_approx_tokens(m.content) for m in messages)
        return response, (prompt_tokens, _approx_tokens(response)), 0.0


class CassetteProvider:
    """Replays ChatExchanges recorded by a live run (JSON Lines of
    ChatExchange). Lookup is by exchange ref; repeated refs replay in file
    order."""

    def __init__(self, path):
        self._responses: dict = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                exchange = ChatExchange.from_dict(json.loads(line))
                self._responses.setdefault(exchange.ref, []).append(exchange)
        if not self._responses:
            raise ValueError(f"cassette {path} holds no exchanges")
        self._lock = threading.Lock()

    def send(self, model: ModelRef, messages: list, scenario: str) -> tuple:
        with self._lock:
            queue = self._responses.get(scenario)
            if queue is None:
                raise UnknownScenario(scenario)
            if not queue:
                raise ScriptExhausted(scenario)
            exchange = queue.pop(0)
        return (
            exchange.response,
            (exchange.prompt_tokens, exchange.completion_tokens),
            exchange.latency_ms,
        )


class HttpChatProvider:
    """POSTs to an OpenAI-style chat completion endpoint."""

    def __init__(self, url: str, api_key: Optional[str] = None, http: Optional[httpx.Client] = None):
        self._url = url
        self._api_key = api_key
        self._http = http or httpx.Client(timeout=60.0)

    def send(self, model: ModelRef, messages: list, scenario: str) -> tuple:
        body = {
            "model": model.model,
            "temperature": model.temperature,
            "messages": [
                {"role": "assistant" if m.role == "agent" else m.role, "content": m.content}
                for m in messages
            ],
        }
        if model.seed is not None:
            body["seed"] = model.seed
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        started = time.monotonic()
        try:
            response = self._http.post(self._url, json=body, headers=headers)
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise TransportError(str(exc))
        latency_ms = (time.monotonic() - started) * 1000.0
        payload = response.json()
        text = payload["choices"][0]["message"]["content"]
        usage = payload.get("usage", {})
        return (
            text,
            (usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)),
            latency_ms,
        )


class TransportError(Exception):
    """A single failed provider call; complete() owns the retry budget."""


def complete(
    provider,
    model: ModelRef,
    messages: list,
    schema: dict,
    scenario: str,
    audit=None,
    parse: Optional[Callable] = None,
    max_retries: int = MAX_RETRIES,
) -> tuple:
    """Call the provider and enforce the schema, correcting up to max_retries
    times. Exactly one ChatExchange lands in the audit sink per call,
    whichever way the call ends.
    """
    if not messages:
        raise ValueError("messages must be non-empty")

    convo = list(messages)
    raw_responses: list = []
    prompt_tokens = completion_tokens = 0
    latency_total = 0.0
    last_error: Optional[str] = None

    for attempt in range(1, max_retries + 2):
        try:
            text, usage, latency = provider.send(model, convo, scenario)
        except TransportError as exc:
            last_error = f"transport: {exc}"
            if attempt <= max_retries:
                continue
            exchange = ChatExchange(
                ref=scenario,
                model=model.model,
                messages=tuple(convo),
                response="",
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
                latency_ms=latency_total,
                attempts=attempt,
                error=last_error,
            )
            if audit is not None:
                audit.append(exchange)
            raise TransportFailed(scenario, str(exc))

        raw_responses.append(text)
        prompt_tokens += usage[0]
        completion_tokens += usage[1]
        latency_total += latency

        try:
            data = json.loads(text)
            jsonschema.validate(data, schema)
            payload = parse(data) if parse else data
        except (ValueError, jsonschema.ValidationError) as exc:
            last_error = f"schema: {exc}"
            if attempt <= max_retries:
                convo = convo + [Message("agent", text), Message("user", CORRECTIVE_MESSAGE)]
                continue
            exchange = ChatExchange(
                ref=scenario,
                model=model.model,
                messages=tuple(convo),
                response=text,
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
                latency_ms=latency_total,
                attempts=attempt,
                error=last_error,
            )
            if audit is not None:
                audit.append(exchange)
            raise SchemaViolation(scenario, raw_responses)

        exchange = ChatExchange(
            ref=scenario,
            model=model.model,
            messages=tuple(convo),
            response=text,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            latency_ms=latency_total,
            attempts=attempt,
        )
        if audit is not None:
            audit.append(exchange)
        return payload, exchange

    raise AssertionError("unreachable")
