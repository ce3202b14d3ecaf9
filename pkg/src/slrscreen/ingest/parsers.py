"""Parsers for the three export formats databases hand out: RIS, BibTeX, CSV.

All three return RawRecords that preserve the native field names verbatim;
mapping onto the unified record shape happens later in profiles.normalize.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from typing import Optional, Union

from ..records import RawRecord, make_fields

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    """Raised on malformed export content; carries a position for the report."""

    def __init__(
        self,
        message: str,
        *,
        path: str = "<input>",
        line: Optional[int] = None,
        offset: Optional[int] = None,
        entry: Optional[str] = None,
    ):
        self.message = message
        self.path = path
        self.line = line
        self.offset = offset
        self.entry = entry
        where = path
        if line is not None:
            where += f":{line}"
        if offset is not None:
            where += f" (byte {offset})"
        if entry is not None:
            where += f" [entry {entry}]"
        super().__init__(f"{where}: {message}")


def _decode(content: Union[bytes, str]) -> str:
    if isinstance(content, bytes):
        return content.decode("utf-8-sig")
    return content.lstrip("﻿")


# ---------------------------------------------------------------------------
# RIS
# ---------------------------------------------------------------------------

_RIS_TAG_RE = re.compile(r"^([A-Z][A-Z0-9])  -\s?(.*)$")


def parse_ris(content: Union[bytes, str], source: str, path: str = "<input>") -> list:
    """Parse RIS content into RawRecords.

    Entries end at an ``ER`` tag. A line of the form ``XX  - value`` starts a
    tag; any other non-blank line continues the previous tag's value. Repeated
    tags (``AU`` lines etc.) keep their order.
    """
    text = _decode(content)
    entries: list = []
    pairs: list = []  # (tag, value) in file order for the current entry
    last_tag_idx: Optional[int] = None
    entry_start: Optional[int] = None

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        match = _RIS_TAG_RE.match(line)
        if match:
            tag, value = match.group(1), match.group(2).strip()
            if tag == "ER":
                if not pairs:
                    raise ParseError(
                        "entry terminator with no preceding fields",
                        path=path,
                        line=lineno,
                    )
                entries.append(
                    RawRecord(
                        source=source,
                        format="ris",
                        fields=make_fields(pairs),
                        path=path,
                        index=len(entries),
                    )
                )
                pairs = []
                last_tag_idx = None
                entry_start = None
                continue
            if entry_start is None:
                entry_start = lineno
            pairs.append((tag, value))
            last_tag_idx = len(pairs) - 1
        else:
            if last_tag_idx is None:
                raise ParseError(
                    f"malformed tag line: {line.strip()[:60]!r}",
                    path=path,
                    line=lineno,
                )
            tag, value = pairs[last_tag_idx]
            joined = f"{value} {line.strip()}".strip()
            pairs[last_tag_idx] = (tag, joined)

    if pairs:
        raise ParseError(
            "unterminated entry (no ER tag before end of file)",
            path=path,
            line=entry_start,
        )
    return entries


# ---------------------------------------------------------------------------
# BibTeX
# ---------------------------------------------------------------------------

_WS_RUN_RE = re.compile(r"\s+")


def _collapse(value: str) -> str:
    return _WS_RUN_RE.sub(" ", value).strip()


def parse_bibtex(content: Union[bytes, str], source: str, path: str = "<input>") -> list:
    """Parse BibTeX content into RawRecords.

    Every ``@type{key, ...}`` block found outside a value becomes one entry;
    the entry type is stored under the reserved ``entrytype`` field. Values
    may be brace-delimited (nested braces balanced, outer pair stripped),
    quote-delimited, or bare. Wrapped values are collapsed to single-line.
    """
    text = _decode(content)
    entries: list = []
    pos = 0
    n = len(text)

    while True:
        at = text.find("@", pos)
        if at == -1:
            break
        pos = at + 1
        # entry type
        m = re.match(r"\s*([A-Za-z]+)\s*", text[pos:])
        if not m:
            raise ParseError("expected entry type after '@'", path=path, offset=at)
        entry_type = m.group(1).lower()
        pos += m.end()
        if pos >= n or text[pos] != "{":
            raise ParseError(
                f"expected '{{' after entry type @{entry_type}", path=path, offset=pos
            )
        pos += 1
        # citation key (up to first comma or closing brace)
        key_end = pos
        while key_end < n and text[key_end] not in ",}":
            key_end += 1
        if key_end >= n:
            raise ParseError(
                "unbalanced braces: entry never closed",
                path=path,
                offset=n,
                entry=text[pos:pos + 40].strip(),
            )
        key = text[pos:key_end].strip()
        pos = key_end
        pairs: list = [("entrytype", entry_type)]
        seen: dict = {"entrytype": 0}

        while True:
            while pos < n and (text[pos].isspace() or text[pos] == ","):
                pos += 1
            if pos >= n:
                raise ParseError(
                    "unbalanced braces: entry never closed",
                    path=path,
                    offset=n,
                    entry=key,
                )
            if text[pos] == "}":
                pos += 1
                break
            eq = text.find("=", pos)
            if eq == -1:
                raise ParseError(
                    f"field without '=' in entry", path=path, offset=pos, entry=key
                )
            name = text[pos:eq].strip().lower()
            pos = eq + 1
            while pos < n and text[pos].isspace():
                pos += 1
            if pos >= n:
                raise ParseError(
                    "unbalanced braces: entry never closed",
                    path=path,
                    offset=n,
                    entry=key,
                )
            if text[pos] == "{":
                depth = 1
                start = pos + 1
                pos += 1
                while pos < n and depth > 0:
                    if text[pos] == "{":
                        depth += 1
                    elif text[pos] == "}":
                        depth -= 1
                    pos += 1
                if depth != 0:
                    raise ParseError(
                        f"unbalanced braces in field {name!r}",
                        path=path,
                        offset=pos,
                        entry=key,
                    )
                value = text[start:pos - 1]
            elif text[pos] == '"':
                start = pos + 1
                pos += 1
                depth = 0
                while pos < n and (text[pos] != '"' or depth > 0):
                    if text[pos] == "{":
                        depth += 1
                    elif text[pos] == "}":
                        depth -= 1
                    pos += 1
                if pos >= n:
                    raise ParseError(
                        f"unterminated quoted value in field {name!r}",
                        path=path,
                        offset=pos,
                        entry=key,
                    )
                value = text[start:pos]
                pos += 1
            else:
                start = pos
                while pos < n and text[pos] not in ",}":
                    pos += 1
                value = text[start:pos]

            value = _collapse(value)
            if name in seen:
                logger.warning(
                    "%s: duplicate field %r in entry %s, last value wins",
                    path,
                    name,
                    key,
                )
                pairs[seen[name]] = (name, value)
            else:
                seen[name] = len(pairs)
                pairs.append((name, value))

        entries.append(
            RawRecord(
                source=source,
                format="bib",
                fields=make_fields(pairs),
                path=path,
                index=len(entries),
            )
        )

    return entries


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def parse_csv(content: Union[bytes, str], profile, path: str = "<input>") -> list:
    """Parse a CSV export (RFC 4180 quoting) into RawRecords using the given
    source profile. The first row is the header; every data row must have the
    header's arity. Row numbers in errors count the header as row 1."""
    text = _decode(content)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        return []
    header = [h.strip() for h in header]

    for column in profile.required_columns():
        if column not in header:
            raise ParseError(
                f"header missing required column {column!r}", path=path, line=1
            )

    entries: list = []
    for rownum, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(
                f"row has {len(row)} fields, header has {len(header)}",
                path=path,
                line=rownum,
            )
        pairs = list(zip(header, row))
        entries.append(
            RawRecord(
                source=profile.source,
                format="csv",
                fields=make_fields(pairs),
                path=path,
                index=len(entries),
            )
        )
    return entries
