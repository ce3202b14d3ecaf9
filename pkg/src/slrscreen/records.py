"""Core domain model: bibliographic records, labels, stages and criteria.

Everything in this module is an immutable value after construction, so
records and outcomes can be shared freely between concurrent workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import re
import unicodedata
from dataclasses import dataclass, field, replace
from datetime import date
from enum import Enum
from typing import Iterable, Optional

# Canonical database names. Anything else is kept verbatim as an "other"
# source; merge tie-breaking orders the known ones first.
KNOWN_SOURCES = ("ACM", "IEEE", "Scopus", "Springer")

_CANONICAL_SOURCE = {name.lower(): name for name in KNOWN_SOURCES}

UNIFIED_CSV_COLUMNS = [
    "id",
    "title",
    "abstract",
    "doi",
    "authors",
    "year",
    "venue",
    "pub_type",
    "url",
    "sources",
    "abstract_provenance",
]

MIN_YEAR = 1900


def canonical_source(name: str) -> str:
    """Map a database name to its canonical spelling; unknown names pass through."""
    name = name.strip()
    if not name:
        raise ValueError("source name must be non-empty")
    return _CANONICAL_SOURCE.get(name.lower(), name)


def source_sort_key(name: str) -> tuple:
    """Sort key placing known databases first in canonical order, then others by name."""
    try:
        return (KNOWN_SOURCES.index(name), name)
    except ValueError:
        return (len(KNOWN_SOURCES), name)


class Label(Enum):
    INCLUDE = "Include"
    EXCLUDE = "Exclude"


def parse_label(value: str) -> Label:
    """Deserialize a verdict label. The label set is closed: anything that is
    not Include/Exclude (case-insensitive) is rejected."""
    if isinstance(value, str):
        folded = value.strip().lower()
        if folded == "include":
            return Label.INCLUDE
        if folded == "exclude":
            return Label.EXCLUDE
    raise ValueError(f"not a valid label: {value!r}")


class Stage(Enum):
    INGESTED = "ingested"
    PROCESSED = "processed"
    QUALITY_CONTROL = "quality_control"
    SCREENING = "screening"
    RELEVANCE = "relevance"


STAGE_ORDER = [
    Stage.INGESTED,
    Stage.PROCESSED,
    Stage.QUALITY_CONTROL,
    Stage.SCREENING,
    Stage.RELEVANCE,
]

# The two double-agent phases plus the single-agent QC pass.
AGENT_STAGES = (Stage.QUALITY_CONTROL, Stage.SCREENING, Stage.RELEVANCE)


def stage_order(a: Stage, b: Stage) -> int:
    """Comparator over the pipeline's total stage order: negative if a runs
    before b, zero if equal, positive if a runs after b."""
    return STAGE_ORDER.index(a) - STAGE_ORDER.index(b)


def stage_predecessor(stage: Stage) -> Optional[Stage]:
    idx = STAGE_ORDER.index(stage)
    return STAGE_ORDER[idx - 1] if idx > 0 else None


class PubType(Enum):
    JOURNAL = "journal"
    CONFERENCE = "conference"
    BOOK_CHAPTER = "book_chapter"
    PREPRINT = "preprint"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Provenance:
    """Where a record's abstract came from.

    kind is one of "original" (present in the export), "provider" (filled by a
    metadata API, detail = provider id), "scraped" (detail = url), "missing".
    """

    kind: str
    detail: str = ""

    KINDS = ("original", "provider", "scraped", "missing")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown provenance kind: {self.kind!r}")

    def encode(self) -> str:
        if self.kind in ("original", "missing"):
            return self.kind
        return f"{self.kind}:{self.detail}"

    @classmethod
    def decode(cls, text: str) -> "Provenance":
        if text in ("original", "missing"):
            return cls(text)
        kind, sep, detail = text.partition(":")
        if not sep:
            raise ValueError(f"bad provenance encoding: {text!r}")
        return cls(kind, detail)


PROVENANCE_ORIGINAL = Provenance("original")
PROVENANCE_MISSING = Provenance("missing")


@dataclass(frozen=True)
class RawRecord:
    """One entry exactly as parsed from an export file, before normalization.

    fields maps the native tag/column name to the tuple of values it carried,
    in file order (repeated RIS tags such as AU stay multi-valued).
    """

    source: str
    format: str  # "ris" | "bib" | "csv"
    fields: tuple  # tuple of (tag, tuple_of_values) pairs, insertion ordered
    path: str
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("entry index must be >= 0")
        if not self.fields:
            raise ValueError("fields map must be non-empty")

    def first(self, tag: str) -> Optional[str]:
        for name, values in self.fields:
            if name == tag and values:
                return values[0]
        return None

    def all(self, tag: str) -> list:
        out = []
        for name, values in self.fields:
            if name == tag:
                out.extend(values)
        return out

    def tags(self) -> list:
        return [name for name, _ in self.fields]


def make_fields(pairs: Iterable) -> tuple:
    """Build the immutable fields structure from (tag, value-or-values) pairs,
    merging repeats of the same tag in order."""
    merged: dict = {}
    for tag, value in pairs:
        values = (value,) if isinstance(value, str) else tuple(value)
        if tag in merged:
            merged[tag] = merged[tag] + values
        else:
            merged[tag] = values
    return tuple(merged.items())


@dataclass(frozen=True)
class Record:
    """A normalized publication record, the unit flowing through every stage."""

    id: str
    title: str
    year: int
    abstract: Optional[str] = None
    abstract_provenance: Provenance = PROVENANCE_MISSING
    doi: Optional[str] = None
    authors: tuple = ()
    venue: Optional[str] = None
    pub_type: PubType = PubType.UNKNOWN
    url: Optional[str] = None
    sources: frozenset = field(default_factory=frozenset)

    def with_abstract(self, abstract: str, provenance: Provenance) -> "Record":
        return replace(self, abstract=abstract, abstract_provenance=provenance)


_WS_RE = re.compile(r"\s+")

# DOI directory prefix plus registrant code; suffix is anything non-blank.
DOI_RE = re.compile(r"^10\.\d{4,9}/\S+$")

_DOI_URL_RE = re.compile(r"^(https?://)?(dx\.)?doi\.org/", re.IGNORECASE)


def normalize_title(title: str) -> str:
    """Canonical form used for ids and duplicate matching: lowercase,
    Unicode-decomposed with combining marks dropped, punctuation stripped,
    whitespace collapsed."""
    text = unicodedata.normalize("NFKD", title.lower())
    text = "".join(ch for ch in text if not unicodedata.combining(ch))
    text = "".join(ch if ch.isalnum() else " " for ch in text)
    return _WS_RE.sub(" ", text).strip()


def normalize_doi(raw: str) -> Optional[str]:
    """Lowercase a DOI and strip any resolver-URL prefix. Returns None when
    the remainder does not look like a DOI at all."""
    doi = _DOI_URL_RE.sub("", raw.strip()).lower()
    return doi if DOI_RE.match(doi) else None


def record_id(doi: Optional[str], title: str, year: int) -> str:
    """Content-derived 128-bit identifier, stable across runs and machines.

    The key is the DOI when present, otherwise the normalized title plus year.
    """
    if doi:
        key = f"doi:{doi}"
    else:
        key = f"title:{normalize_title(title)}|{year}"
    return hashlib.blake2b(key.encode("utf-8"), digest_size=16).hexdigest()


def max_valid_year() -> int:
    return date.today().year + 1


def validate_record(candidate: Record) -> list:
    """Check every Record invariant; returns the list of violated invariant
    names (empty means the record is valid). Validation failures are data,
    not exceptions."""
    violations = []
    if not candidate.title or not candidate.title.strip():
        violations.append("title-empty")
    if candidate.doi is not None:
        if candidate.doi != candidate.doi.lower() or not DOI_RE.match(candidate.doi):
            violations.append("doi-not-normalized")
    has_abstract = candidate.abstract is not None and candidate.abstract != ""
    provenance_missing = candidate.abstract_provenance.kind == "missing"
    if has_abstract == provenance_missing:
        violations.append("abstract-provenance-mismatch")
    if not (MIN_YEAR <= candidate.year <= max_valid_year()):
        violations.append("year-out-of-range")
    if not candidate.sources:
        violations.append("sources-empty")
    elif any(not s or not s.strip() for s in candidate.sources):
        violations.append("source-name-empty")
    if "title-empty" not in violations and "year-out-of-range" not in violations:
        if candidate.id != record_id(candidate.doi, candidate.title, candidate.year):
            violations.append("id-mismatch")
    return violations


def build_record(
    title: str,
    year: int,
    *,
    abstract: Optional[str] = None,
    abstract_provenance: Optional[Provenance] = None,
    doi: Optional[str] = None,
    authors: Iterable = (),
    venue: Optional[str] = None,
    pub_type: PubType = PubType.UNKNOWN,
    url: Optional[str] = None,
    sources: Iterable = (),
) -> Record:
    """Construct a Record with its content-derived id filled in."""
    if abstract_provenance is None:
        abstract_provenance = PROVENANCE_ORIGINAL if abstract else PROVENANCE_MISSING
    return Record(
        id=record_id(doi, title, year),
        title=title,
        year=year,
        abstract=abstract or None,
        abstract_provenance=abstract_provenance,
        doi=doi,
        authors=tuple(authors),
        venue=venue or None,
        pub_type=pub_type,
        url=url or None,
        sources=frozenset(canonical_source(s) for s in sources),
    )


@dataclass(frozen=True)
class Criterion:
    id: int
    text: str
    phase: str  # "pre_filtered" | "quality_control" | "screening" | "relevance"

    PHASES = ("pre_filtered", "quality_control", "screening", "relevance")

    def __post_init__(self):
        if self.phase not in self.PHASES:
            raise ValueError(f"unknown criterion phase: {self.phase!r}")


@dataclass(frozen=True)
class CriteriaSet:
    """The review's inclusion criteria with their phase assignments.

    Pre-filtered criteria (already enforced at database-query time, e.g. date
    range and language) are documented but never handed to agents.
    """

    criteria: tuple

    def __post_init__(self):
        if not self.criteria:
            raise ValueError("criteria list must be non-empty")
        ids = [c.id for c in self.criteria]
        if len(set(ids)) != len(ids):
            raise ValueError("criterion ids must be unique")

    def for_phase(self, phase: str) -> list:
        return [c for c in self.criteria if c.phase == phase]

    def to_dict(self) -> dict:
        return {
            "criteria": [
                {"id": c.id, "text": c.text, "phase": c.phase} for c in self.criteria
            ]
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CriteriaSet":
        return cls(
            tuple(
                Criterion(int(c["id"]), c["text"], c["phase"])
                for c in payload["criteria"]
            )
        )


# ---------------------------------------------------------------------------
# Unified record CSV
# ---------------------------------------------------------------------------

def record_to_row(rec: Record) -> list:
    return [
        rec.id,
        rec.title,
        rec.abstract or "",
        rec.doi or "",
        ";".join(rec.authors),
        str(rec.year),
        rec.venue or "",
        rec.pub_type.value,
        rec.url or "",
        ";".join(sorted(rec.sources, key=source_sort_key)),
        rec.abstract_provenance.encode(),
    ]


def record_from_row(row: dict) -> Record:
    return Record(
        id=row["id"],
        title=row["title"],
        abstract=row["abstract"] or None,
        abstract_provenance=Provenance.decode(row["abstract_provenance"]),
        doi=row["doi"] or None,
        authors=tuple(a for a in row["authors"].split(";") if a),
        year=int(row["year"]),
        venue=row["venue"] or None,
        pub_type=PubType(row["pub_type"]),
        url=row["url"] or None,
        sources=frozenset(s for s in row["sources"].split(";") if s),
    )


def write_records_csv(records: Iterable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(UNIFIED_CSV_COLUMNS)
        for rec in records:
            writer.writerow(record_to_row(rec))


def read_records_csv(path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != UNIFIED_CSV_COLUMNS:
            raise ValueError(
                f"unexpected unified CSV header: {reader.fieldnames}"
            )
        return [record_from_row(row) for row in reader]


def records_csv_text(records: Iterable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(UNIFIED_CSV_COLUMNS)
    for rec in records:
        writer.writerow(record_to_row(rec))
    return buf.getvalue()
