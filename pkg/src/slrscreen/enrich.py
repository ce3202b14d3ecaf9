"""Abstract self-curation: fill records whose export lacked an abstract from
metadata APIs, falling back to scraping the record's landing page. Whatever
stays missing is flagged for the human verification queue."""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from html.parser import HTMLParser
from math import floor
from typing import Callable, Optional

import httpx

from .records import Provenance, Record

logger = logging.getLogger(__name__)

MIN_SCRAPED_LENGTH = 200
MAX_ATTEMPTS = 3
BACKOFF_BASE = 0.5

RETRYABLE = ("transport", "http_429", "http_5xx")

KIND_API = "metadata_api"
KIND_SCRAPER = "scraper"
KIND_SCRIPTED = "scripted"


class EnrichError(Exception):
    """One failed provider attempt; class_ feeds the report's error taxonomy."""

    def __init__(self, class_: str, detail: str = ""):
        self.class_ = class_
        self.detail = detail
        super().__init__(f"{class_}: {detail}" if detail else class_)

    @staticmethod
    def from_status(status: int) -> "EnrichError":
        if status == 429:
            return EnrichError("http_429")
        if 500 <= status <= 599:
            return EnrichError("http_5xx", str(status))
        return EnrichError(f"http_{status}")


@dataclass(frozen=True)
class ProviderSpec:
    id: str
    kind: str
    endpoint: str = ""
    rate_limit: float = 5.0
    auth_env: Optional[str] = None
    # scraper-only: elements whose text may be an abstract
    selectors: tuple = (
        {"tag": "div", "class": "abstract"},
        {"tag": "section", "class": "abstract"},
        {"tag": "div", "id": "abstract"},
        {"tag": "section", "id": "Abs1"},
        {"tag": "meta", "name": "citation_abstract"},
    )

    def __post_init__(self):
        if self.rate_limit <= 0:
            raise ValueError("rate limit must be positive")
        if self.kind not in (KIND_API, KIND_SCRAPER, KIND_SCRIPTED):
            raise ValueError(f"unknown provider kind: {self.kind!r}")


@dataclass(frozen=True)
class Attempt:
    record_id: str
    provider_id: str
    at: float
    error: Optional[str] = None  # None means the attempt succeeded

    def to_dict(self) -> dict:
        return {
            "record": self.record_id,
            "provider": self.provider_id,
            "at": self.at,
            "error": self.error,
        }


class RateLimiter:
    """Sliding-window limiter shared by all workers hitting one provider."""

    def __init__(self, limit: float, clock=time.monotonic, sleep=time.sleep):
        if limit <= 0:
            raise ValueError("limit must be positive")
        self._capacity = max(1, floor(limit))
        self._duration = 1.0 if limit >= 1 else 1.0 / limit
        self._clock = clock
        self._sleep = sleep
        self._window = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        while True:
            with self._lock:
                now = self._clock()
                while self._window and self._window[0] <= now - self._duration:
                    self._window.popleft()
                if len(self._window) < self._capacity:
                    self._window.append(now)
                    return now
                wait = self._window[0] + self._duration - now
            self._sleep(max(wait, 0.001))


_TAG_RE = re.compile(r"<[^>]+>")
_WS_RE = re.compile(r"\s+")


def _clean_text(text: str) -> str:
    return _WS_RE.sub(" ", _TAG_RE.sub(" ", text)).strip()


class MetadataApiClient:
    """GET a JSON endpoint templated on the record's DOI; the abstract is read
    from "abstract" at the top level or under "message"."""

    def __init__(self, spec: ProviderSpec, http: httpx.Client, credential: Optional[str] = None):
        self.spec = spec
        self._http = http
        self._credential = credential

    def fetch(self, record: Record) -> tuple:
        if not record.doi:
            raise EnrichError("no-doi")
        url = self.spec.endpoint.format(doi=record.doi)
        headers = {}
        if self._credential:
            headers["Authorization"] = f"Bearer {self._credential}"
        try:
            response = self._http.get(url, headers=headers)
        except httpx.HTTPError as exc:
            raise EnrichError("transport", str(exc))
        if response.status_code != 200:
            raise EnrichError.from_status(response.status_code)
        try:
            payload = response.json()
        except ValueError:
            raise EnrichError("garbage-payload", "not JSON")
        abstract = payload.get("abstract")
        if abstract is None and isinstance(payload.get("message"), dict):
            abstract = payload["message"].get("abstract")
        abstract = _clean_text(abstract or "")
        if not abstract:
            raise EnrichError("empty-payload")
        return abstract, Provenance("provider", self.spec.id)


_VOID_TAGS = frozenset(
    "area base br col embed hr img input link meta param source track wbr".split()
)


class _BlockCollector(HTMLParser):
    """Collects the text content of every element matching a selector, plus
    content attributes of matching meta tags."""

    def __init__(self, selectors):
        super().__init__(convert_charrefs=True)
        self._selectors = selectors
        self.blocks = []
        self._open = []  # (tag, depth_at_open, buffer) for matching elements
        self._depth = 0

    def _matches(self, tag, attrs):
        attrs = dict(attrs)
        for sel in self._selectors:
            if sel["tag"] != tag:
                continue
            if "class" in sel:
                classes = (attrs.get("class") or "").lower().split()
                if not any(sel["class"] in c for c in classes):
                    continue
            if "id" in sel and sel["id"].lower() != (attrs.get("id") or "").lower():
                continue
            if "name" in sel and sel["name"] != attrs.get("name"):
                continue
            return True
        return False

    def handle_starttag(self, tag, attrs):
        if tag == "meta":
            if self._matches(tag, attrs):
                content = dict(attrs).get("content") or ""
                if content:
                    self.blocks.append(content)
            return
        if tag in _VOID_TAGS:
            return  # never closed, would desync depth tracking
        self._depth += 1
        if self._matches(tag, attrs):
            self._open.append((tag, self._depth, []))

    def handle_endtag(self, tag):
        if tag == "meta" or tag in _VOID_TAGS:
            return
        if self._open and self._open[-1][0] == tag and self._open[-1][1] == self._depth:
            _, _, buf = self._open.pop()
            self.blocks.append("".join(buf))
        self._depth = max(0, self._depth - 1)

    def handle_data(self, data):
        for _, _, buf in self._open:
            buf.append(data)


class ScraperClient:
    """Fetch the record's landing page and take the longest matching text
    block; short blocks are navigation chrome, not abstracts."""

    def __init__(self, spec: ProviderSpec, http: httpx.Client, min_length: int = MIN_SCRAPED_LENGTH):
        self.spec = spec
        self._http = http
        self._min_length = min_length

    def fetch(self, record: Record) -> tuple:
        if not record.url:
            raise EnrichError("no-url")
        try:
            response = self._http.get(record.url)
        except httpx.HTTPError as exc:
            raise EnrichError("transport", str(exc))
        if response.status_code != 200:
            raise EnrichError.from_status(response.status_code)
        collector = _BlockCollector(self.spec.selectors)
        collector.feed(response.text)
        blocks = [_clean_text(b) for b in collector.blocks]
        blocks = [b for b in blocks if len(b) >= self._min_length]
        if not blocks:
            raise EnrichError("no-match")
        return max(blocks, key=len), Provenance("scraped", record.url)


class ScriptedClient:
    """Deterministic provider for tests and offline replays.

    script maps record id to a list of per-attempt outcomes, consumed in
    order: a plain string succeeds with that abstract, a "!class" string
    raises that error class. Missing ids raise empty-payload.
    """

    def __init__(self, spec: ProviderSpec, script: dict):
        self.spec = spec
        self._script = {k: list(v) for k, v in script.items()}
        self.calls = 0

    def fetch(self, record: Record) -> tuple:
        self.calls += 1
        queue = self._script.get(record.id)
        if not queue:
            raise EnrichError("empty-payload", "record not in script")
        outcome = queue.pop(0)
        if outcome.startswith("!"):
            raise EnrichError(outcome[1:])
        return outcome, Provenance("provider", self.spec.id)


@dataclass
class EnrichmentReport:
    attempted: int = 0
    filled: dict = field(default_factory=dict)  # provider id -> count
    still_missing: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (record id, provider id, class)

    def to_dict(self) -> dict:
        return {
            "attempted": self.attempted,
            "filled": dict(self.filled),
            "still_missing": list(self.still_missing),
            "errors": [list(e) for e in self.errors],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def check(self):
        assert self.attempted == sum(self.filled.values()) + len(self.still_missing)


def fetch_abstract(
    record: Record,
    clients: list,
    limiters: Optional[dict] = None,
    sleep: Callable = time.sleep,
    clock: Callable = time.monotonic,
) -> tuple:
    """Try providers in order until one yields an abstract.

    Returns (record, attempts). Transient failures (transport, 429, 5xx) are
    retried up to 3 attempts with exponential backoff before moving on.
    """
    if not clients:
        raise ValueError("providers must be non-empty")
    if record.abstract:
        return record, []

    attempts = []
    for client in clients:
        limiter = (limiters or {}).get(client.spec.id)
        for attempt_no in range(MAX_ATTEMPTS):
            at = limiter.acquire() if limiter else clock()
            try:
                text, provenance = client.fetch(record)
            except EnrichError as exc:
                attempts.append(Attempt(record.id, client.spec.id, at, exc.class_))
                if exc.class_ in RETRYABLE and attempt_no < MAX_ATTEMPTS - 1:
                    sleep(BACKOFF_BASE * (2 ** attempt_no))
                    continue
                break
            attempts.append(Attempt(record.id, client.spec.id, at))
            return record.with_abstract(text, provenance), attempts
    return record, attempts


def enrich_batch(
    records: list,
    clients: list,
    concurrency: int = 4,
    limiters: Optional[dict] = None,
    sleep: Callable = time.sleep,
    clock: Callable = time.monotonic,
) -> tuple:
    """Run fetch_abstract over every record lacking an abstract.

    Output order equals input order; only abstract/provenance ever change.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    if limiters is None:
        limiters = {
            c.spec.id: RateLimiter(c.spec.rate_limit, clock=clock, sleep=sleep) for c in clients
        }

    report = EnrichmentReport()
    report.attempted = sum(1 for r in records if not r.abstract)

    def work(rec):
        return fetch_abstract(rec, clients, limiters=limiters, sleep=sleep, clock=clock)

    out = []
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [pool.submit(work, rec) for rec in records]
        for rec, future in zip(records, futures):
            enriched, attempts = future.result()
            out.append(enriched)
            winner = None
            for a in attempts:
                if a.error:
                    report.errors.append((a.record_id, a.provider_id, a.error))
                else:
                    winner = a.provider_id
            if not rec.abstract:
                if winner is not None:
                    report.filled[winner] = report.filled.get(winner, 0) + 1
                else:
                    report.still_missing.append(rec.id)
    report.check()
    return out, report


def build_clients(specs: list, http: Optional[httpx.Client] = None, env: Optional[dict] = None) -> list:
    """Instantiate clients for provider specs; scripted specs are skipped here
    (they are constructed explicitly with their scripts)."""
    import os

    env = env if env is not None else os.environ
    http = http or httpx.Client(timeout=10.0, follow_redirects=True)
    clients = []
    for spec in specs:
        credential = env.get(spec.auth_env) if spec.auth_env else None
        if spec.kind == KIND_API:
            clients.append(MetadataApiClient(spec, http, credential))
        elif spec.kind == KIND_SCRAPER:
            clients.append(ScraperClient(spec, http))
    return clients
