"""Append-only evidence trail and the per-source funnel accounting.

Every model exchange lands in one JSON Lines file; outcomes cite exchanges by
ref. Nothing is ever rewritten, so the full decision history stays diffable
and a resumed run simply appends.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass

from .checkpoint import IntegrityError, canonical_line
from .gateway import ChatExchange
from .records import source_sort_key

FUNNEL_COLUMNS = ("raw", "processed", "quality_control", "screening", "relevance")


class ExchangeLog:
    """Serialized append sink shared by concurrent stage workers."""

    def __init__(self, path):
        self._fh = open(path, "a", encoding="utf-8")
        self._lock = threading.Lock()

    def append(self, exchange: ChatExchange):
        line = canonical_line(exchange.to_dict())
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_exchange_index(path) -> dict:
    """ref -> ChatExchange. A ref can recur when a crash cut a run between a
    call and its outcome write; the rerun's exchange (the one the persisted
    outcome came from) is the last occurrence, so last wins."""
    index: dict = {}
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        return index
    with fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            exchange = ChatExchange.from_dict(json.loads(line))
            index[exchange.ref] = exchange
    return index


@dataclass(frozen=True)
class FunnelReport:
    columns: tuple  # subset of FUNNEL_COLUMNS actually run, in order
    rows: dict  # source -> {column: count}
    totals: dict  # column -> count
    losses: dict  # source -> normalization rejections
    merges: dict  # source -> records merged away by dedup

    def check(self):
        for source, row in self.rows.items():
            values = [row[c] for c in self.columns]
            for earlier, later in zip(values, values[1:]):
                if earlier < later:
                    raise IntegrityError(f"funnel row {source} is not monotone: {values}")
        for column in self.columns:
            total = sum(row[column] for row in self.rows.values())
            if total != self.totals[column]:
                raise IntegrityError(f"totals column {column} is not the row sum")

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "rows": {s: dict(r) for s, r in self.rows.items()},
            "totals": dict(self.totals),
            "losses": dict(self.losses),
            "merges": dict(self.merges),
        }

    def to_csv(self) -> str:
        lines = ["source," + ",".join(self.columns)]
        for source in sorted(self.rows, key=source_sort_key):
            row = self.rows[source]
            lines.append(source + "," + ",".join(str(row[c]) for c in self.columns))
        lines.append("total," + ",".join(str(self.totals[c]) for c in self.columns))
        return "\n".join(lines) + "\n"


def build_funnel(records: list, outcomes_by_stage: dict,
                 dedup_log=None, rejections=None) -> FunnelReport:
    """Count the per-source survivors at each stage.

    Raw counts reconstruct the original per-database export sizes: every
    unified record counts toward each source that exported it, plus the
    records normalization rejected and the duplicates dedup merged away.
    From processed onward a record counts toward one source only (first of
    its sources in canonical order), matching how a merged record survives
    under a single identity.
    """
    losses: dict = {}
    for rejection in rejections or []:
        source = rejection["source"]
        losses[source] = losses.get(source, 0) + 1
    merges: dict = dict(dedup_log.merges_by_source()) if dedup_log is not None else {}

    by_id = {r.id: r for r in records}
    attr = {r.id: min(r.sources, key=source_sort_key) for r in records}

    sources = set(losses) | set(merges)
    for record in records:
        sources.update(record.sources)

    rows = {s: {"raw": 0, "processed": 0} for s in sources}
    for record in records:
        for source in record.sources:
            rows[source]["raw"] += 1
        rows[attr[record.id]]["processed"] += 1
    for source, count in losses.items():
        rows[source]["raw"] += count
    for source, count in merges.items():
        rows[source]["raw"] += count

    columns = ["raw", "processed"]
    for stage in FUNNEL_COLUMNS[2:]:
        if stage not in outcomes_by_stage:
            continue
        columns.append(stage)
        for row in rows.values():
            row[stage] = 0
        for outcome in outcomes_by_stage[stage]:
            if outcome.record_id not in by_id:
                raise IntegrityError(
                    f"{stage} outcome for unknown record id {outcome.record_id}"
                )
            if outcome.label.value == "Include":
                rows[attr[outcome.record_id]][stage] += 1

    totals = {c: sum(row[c] for row in rows.values()) for c in columns}
    report = FunnelReport(
        columns=tuple(columns),
        rows=rows,
        totals=totals,
        losses=losses,
        merges=merges,
    )
    report.check()
    return report


def check_referential_integrity(outcomes: list, exchange_index: dict):
    for outcome in outcomes:
        for ref in outcome.refs():
            if ref not in exchange_index:
                raise IntegrityError(f"dangling exchange ref: {ref}")


def export_transcripts(outcomes: list, exchange_index: dict) -> str:
    """One JSON line per outcome with its dialogue and the resolved exchange
    bodies, ordered by record id. Rerunning on a closed phase is byte-stable."""
    lines = []
    for outcome in sorted(outcomes, key=lambda o: o.record_id):
        resolved = {}
        for ref in outcome.refs():
            exchange = exchange_index.get(ref)
            if exchange is None:
                raise IntegrityError(f"dangling exchange ref: {ref}")
            resolved[ref] = exchange.to_dict()
        lines.append(canonical_line({"outcome": outcome.to_dict(), "exchanges": resolved}))
    return "\n".join(lines) + ("\n" if lines else "")
