"""Source profiles: how each database's native export fields map onto the
unified record shape, plus the normalization step applying them."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Optional

from ..records import (
    MIN_YEAR,
    PubType,
    RawRecord,
    Record,
    build_record,
    max_valid_year,
    normalize_doi,
    validate_record,
)

logger = logging.getLogger(__name__)

ROLES = ("title", "abstract", "doi", "authors", "year", "date", "venue", "pub_type", "url")


class RecordRejected(Exception):
    """A raw entry that cannot become a valid Record (counted as a
    normalization loss in the funnel, never silently dropped)."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


@dataclass(frozen=True)
class SourceProfile:
    """Field mapping for one (source, format) pair.

    mapping pairs native field names with record roles; several natives may
    feed the same role (first non-empty wins, authors accumulate). separators
    split multi-valued single fields, keyed by role.
    """

    source: str
    format: str  # "ris" | "bib" | "csv"
    mapping: tuple  # ((native, role), ...)
    separators: tuple = ()  # ((role, separator), ...)

    def __post_init__(self):
        roles = [role for _, role in self.mapping]
        if "title" not in roles:
            raise ValueError("profile mapping must cover at least the title role")
        for _, role in self.mapping:
            if role not in ROLES:
                raise ValueError(f"unknown record role: {role!r}")

    def natives_for(self, role: str) -> list:
        return [native for native, r in self.mapping if r == role]

    def separator_for(self, role: str) -> Optional[str]:
        for r, sep in self.separators:
            if r == role:
                return sep
        return None

    def required_columns(self) -> list:
        # Only the title is hard-required; any one mapped native satisfies it,
        # so require the first when none of them could be present.
        return [self.natives_for("title")[0]]

    def mapped_natives(self) -> set:
        return {native for native, _ in self.mapping}


_RIS_MAPPING = (
    ("TI", "title"),
    ("T1", "title"),
    ("AB", "abstract"),
    ("N2", "abstract"),
    ("DO", "doi"),
    ("AU", "authors"),
    ("A1", "authors"),
    ("PY", "year"),
    ("Y1", "date"),
    ("DA", "date"),
    ("T2", "venue"),
    ("JO", "venue"),
    ("JF", "venue"),
    ("BT", "venue"),
    ("TY", "pub_type"),
    ("UR", "url"),
)

_BIB_MAPPING = (
    ("title", "title"),
    ("abstract", "abstract"),
    ("doi", "doi"),
    ("author", "authors"),
    ("year", "year"),
    ("date", "date"),
    ("journal", "venue"),
    ("booktitle", "venue"),
    ("series", "venue"),
    ("entrytype", "pub_type"),
    ("url", "url"),
)

_CSV_MAPPING = (
    ("Title", "title"),
    ("Abstract", "abstract"),
    ("DOI", "doi"),
    ("Authors", "authors"),
    ("Year", "year"),
    ("Date", "date"),
    ("Venue", "venue"),
    ("Source title", "venue"),
    ("Document Type", "pub_type"),
    ("URL", "url"),
    ("Link", "url"),
)


def default_profile(source: str, format: str) -> SourceProfile:
    """The shipped mapping for a format; config may override per source."""
    if format == "ris":
        return SourceProfile(source, "ris", _RIS_MAPPING)
    if format == "bib":
        return SourceProfile(source, "bib", _BIB_MAPPING, (("authors", " and "),))
    if format == "csv":
        return SourceProfile(source, "csv", _CSV_MAPPING, (("authors", ";"),))
    raise ValueError(f"unknown export format: {format!r}")


_YEAR_TOKEN_RE = re.compile(r"\b(19|20)\d{2}\b")
_WS_RE = re.compile(r"\s+")

_RIS_TYPES = {
    "JOUR": PubType.JOURNAL,
    "EJOUR": PubType.JOURNAL,
    "CONF": PubType.CONFERENCE,
    "CPAPER": PubType.CONFERENCE,
    "CHAP": PubType.BOOK_CHAPTER,
    "UNPB": PubType.PREPRINT,
}

_BIB_TYPES = {
    "article": PubType.JOURNAL,
    "inproceedings": PubType.CONFERENCE,
    "conference": PubType.CONFERENCE,
    "proceedings": PubType.CONFERENCE,
    "incollection": PubType.BOOK_CHAPTER,
    "inbook": PubType.BOOK_CHAPTER,
    "unpublished": PubType.PREPRINT,
}


def infer_pub_type(format: str, value: Optional[str]) -> PubType:
    if not value:
        return PubType.UNKNOWN
    value = value.strip()
    if format == "ris":
        return _RIS_TYPES.get(value.upper(), PubType.UNKNOWN)
    if format == "bib":
        return _BIB_TYPES.get(value.lower(), PubType.UNKNOWN)
    lowered = value.lower()
    if "journal" in lowered or "article" in lowered:
        return PubType.JOURNAL
    if "conference" in lowered or "proceeding" in lowered:
        return PubType.CONFERENCE
    if "chapter" in lowered or "book" in lowered:
        return PubType.BOOK_CHAPTER
    if "preprint" in lowered or "arxiv" in lowered:
        return PubType.PREPRINT
    return PubType.UNKNOWN


def _clean(value: str, format: str) -> str:
    if format == "bib":
        # protective braces around capitalized words are markup, not content
        value = value.replace("{", "").replace("}", "")
    return _WS_RE.sub(" ", value).strip()


def _first_value(raw: RawRecord, profile: SourceProfile, role: str) -> Optional[str]:
    for native in profile.natives_for(role):
        for value in raw.all(native):
            if value and value.strip():
                return _clean(value, raw.format)
    return None


def _author_list(raw: RawRecord, profile: SourceProfile) -> tuple:
    values: list = []
    for native in profile.natives_for("authors"):
        values.extend(v for v in raw.all(native) if v and v.strip())
    sep = profile.separator_for("authors")
    names: list = []
    for value in values:
        parts = value.split(sep) if sep else [value]
        for part in parts:
            # the unified CSV joins authors on ";", so names may not contain it
            name = _clean(part, raw.format).replace(";", ",")
            if name:
                names.append(name)
    return tuple(names)


def _extract_year(raw: RawRecord, profile: SourceProfile) -> Optional[int]:
    candidates: list = []
    for role in ("year", "date"):
        for native in profile.natives_for(role):
            candidates.extend(v for v in raw.all(native) if v and v.strip())
    for value in candidates:
        stripped = value.strip()
        if stripped.isdigit() and len(stripped) == 4:
            return int(stripped)
    for value in candidates:
        m = _YEAR_TOKEN_RE.search(value)
        if m:
            return int(m.group(0))
    return None


def normalize(raw: RawRecord, profile: SourceProfile) -> Record:
    """Map a RawRecord onto the unified Record shape.

    Raises RecordRejected for entries that cannot satisfy the record
    invariants (no title, no extractable year, out-of-range year).
    """
    title = _first_value(raw, profile, "title")
    if not title:
        raise RecordRejected("missing-title")

    year = _extract_year(raw, profile)
    if year is None:
        raise RecordRejected("missing-year")
    if not (MIN_YEAR <= year <= max_valid_year()):
        raise RecordRejected("year-out-of-range")

    doi_raw = _first_value(raw, profile, "doi")
    doi = normalize_doi(doi_raw) if doi_raw else None
    if doi_raw and doi is None:
        logger.info("%s entry %d: unparseable DOI %r dropped", raw.path, raw.index, doi_raw)

    abstract = _first_value(raw, profile, "abstract")

    record = build_record(
        title=title,
        year=year,
        abstract=abstract,
        doi=doi,
        authors=_author_list(raw, profile),
        venue=_first_value(raw, profile, "venue"),
        pub_type=infer_pub_type(raw.format, _first_value(raw, profile, "pub_type")),
        url=_first_value(raw, profile, "url"),
        sources=(raw.source,),
    )
    violations = validate_record(record)
    if violations:
        raise RecordRejected("+".join(violations))
    return record


def normalize_all(raws: list, profile: SourceProfile) -> tuple:
    """Normalize a batch; returns (records, rejections). Rejections carry the
    origin so funnel accounting can attribute the loss to its source."""
    records: list = []
    rejections: list = []
    dropped_fields = 0
    mapped = profile.mapped_natives()
    for raw in raws:
        dropped_fields += sum(1 for tag in raw.tags() if tag not in mapped)
        try:
            records.append(normalize(raw, profile))
        except RecordRejected as exc:
            rejections.append(
                {
                    "source": raw.source,
                    "path": raw.path,
                    "index": raw.index,
                    "reason": exc.reason,
                }
            )
    if dropped_fields:
        logger.info(
            "%s (%s): %d unmapped native field values dropped at normalization",
            profile.source,
            profile.format,
            dropped_fields,
        )
    return records, rejections
