"""Command orchestration.

Each CLI subcommand (and each mutating API route) maps to one function here so
both front ends share a single code path. All state lives in the checkpoint
directory; commands take the directory lock, do their work, and seal the
stage so the next one can verify what it builds on.
"""

import json
import logging
import os
import threading
from pathlib import Path
from typing import Optional

from .audit import ExchangeLog, FunnelReport, build_funnel, load_exchange_index
from .checkpoint import CheckpointStore, canonical_line
from .config import PipelineConfig, credential_for
from .enrich import EnrichmentReport, ScriptedClient, build_clients, enrich_batch
from .gateway import CassetteProvider, HttpChatProvider, ScriptedProvider
from .ingest import DedupLog, deduplicate, default_profile, normalize_all, parse_bibtex, parse_csv, parse_ris
from .promptforge import PromptSet, gate_approval, generate_prompts
from .records import (
    Label,
    Stage,
    parse_label,
    read_records_csv,
    write_records_csv,
)
from .stages import (
    DUAL_STAGES,
    FLAG_NEEDS_VERIFICATION,
    PHASE_STAGES,
    ModelDistinctnessError,
    PhaseRun,
    StageOutcome,
)
from .validation import export_sample_sheet, extrapolate, FnSample, sample_excluded

logger = logging.getLogger(__name__)

RECORDS_FILE = "records.csv"
PROCESSED_FILE = "records_processed.csv"
DEDUP_LOG_FILE = "dedup_log.jsonl"
REJECTIONS_FILE = "rejections.jsonl"
ENRICHMENT_REPORT_FILE = "enrichment_report.json"
PROMPTS_FILE = "prompts.json"
FN_SAMPLES_FILE = "fn_samples.json"
FN_ESTIMATE_FILE = "fn_estimate.json"
MANUAL_LABELS_FILE = "manual_labels.json"

# test hook: hard-exit the process after this many provider calls, simulating
# a machine dying mid-run with responses received but nothing persisted
CRASH_ENV = "SLRSCREEN_CRASH_AFTER_CALLS"

STAGE_ARTIFACTS = {
    "ingested": [RECORDS_FILE, DEDUP_LOG_FILE, REJECTIONS_FILE],
    "processed": [PROCESSED_FILE, ENRICHMENT_REPORT_FILE],
}

_PARSERS = {"ris": parse_ris, "bib": parse_bibtex}


class PipelineError(Exception):
    """A command cannot proceed; the message says why."""


class ReviewConflict(ValueError):
    """A human-review mutation clashes with existing state (HTTP 409)."""


class _CrashInjector:
    """Provider wrapper that kills the process after the Nth call returns.

    Exiting after the response arrives (not before the call) exercises the
    worst recovery case: the call is spent but its outcome was never written.
    """

    def __init__(self, inner, after: int):
        self._inner = inner
        self._after = after
        self._count = 0
        self._lock = threading.Lock()

    def send(self, model, messages, scenario):
        result = self._inner.send(model, messages, scenario)
        with self._lock:
            self._count += 1
            fatal = self._count == self._after
        if fatal:
            os._exit(137)
        return result


def open_store(config: PipelineConfig) -> CheckpointStore:
    return CheckpointStore(config.checkpoint_dir)


def make_provider(config: PipelineConfig):
    spec = config.provider
    kind = spec["type"]
    if kind == "scripted":
        with open(spec["script"], encoding="utf-8") as fh:
            script = json.load(fh)
        provider = ScriptedProvider(script, call_log_path=spec.get("call_log"))
    elif kind == "cassette":
        provider = CassetteProvider(spec["path"])
    else:
        api_key = os.environ.get(spec["api_key_env"]) if spec.get("api_key_env") else None
        provider = HttpChatProvider(spec["url"], api_key=api_key)
    crash_after = os.environ.get(CRASH_ENV)
    if crash_after:
        provider = _CrashInjector(provider, int(crash_after))
    return provider


# -- ingest -------------------------------------------------------------------


def cmd_ingest(config: PipelineConfig) -> dict:
    store = open_store(config)
    with store.lock():
        if store.is_closed(Stage.INGESTED):
            return {"stage": "ingested", "status": "skipped", "reason": "already closed"}
        records = []
        rejections = []
        raw_counts = {}
        for src in config.sources:
            content = src.path.read_bytes()
            profile = default_profile(src.name, src.format)
            if src.format == "csv":
                raws = parse_csv(content, profile, path=str(src.path))
            else:
                raws = _PARSERS[src.format](content, src.name, path=str(src.path))
            raw_counts[src.name] = raw_counts.get(src.name, 0) + len(raws)
            normalized, rejected = normalize_all(raws, profile)
            records.extend(normalized)
            rejections.extend(rejected)
        survivors, dedup_log = deduplicate(records)
        write_records_csv(survivors, store.file(RECORDS_FILE))
        dedup_log.write(store.file(DEDUP_LOG_FILE))
        with open(store.file(REJECTIONS_FILE), "w", encoding="utf-8") as fh:
            for entry in rejections:
                fh.write(canonical_line(entry) + "\n")
        store.close_stage(Stage.INGESTED, [store.file(n) for n in STAGE_ARTIFACTS["ingested"]])
        return {
            "stage": "ingested",
            "status": "closed",
            "raw": raw_counts,
            "raw_total": sum(raw_counts.values()),
            "rejected": len(rejections),
            "merged_away": dedup_log.merged_away_count(),
            "unique": len(survivors),
        }


# -- enrichment ---------------------------------------------------------------


def _enrichment_clients(config: PipelineConfig):
    clients = []
    live_specs = [s for s in config.enrichment if s.kind != "scripted"]
    if live_specs:
        clients.extend(build_clients(live_specs))
    for spec in config.enrichment:
        if spec.kind == "scripted":
            with open(config.enrichment_scripts[spec.id], encoding="utf-8") as fh:
                clients.append(ScriptedClient(spec, json.load(fh)))
    return clients


def cmd_enrich(config: PipelineConfig) -> dict:
    store = open_store(config)
    with store.lock():
        store.require_predecessor(Stage.PROCESSED)
        if store.is_closed(Stage.PROCESSED):
            return {"stage": "processed", "status": "skipped", "reason": "already closed"}
        store.verify_stage(Stage.INGESTED)
        records = read_records_csv(store.file(RECORDS_FILE))
        clients = _enrichment_clients(config)
        if clients:
            out, report = enrich_batch(records, clients, concurrency=config.concurrency)
        else:
            # nothing configured: the processed set is the ingested set
            out = records
            report = EnrichmentReport()
            report.attempted = sum(1 for r in records if not r.abstract)
            report.still_missing = [r.id for r in records if not r.abstract]
        write_records_csv(out, store.file(PROCESSED_FILE))
        store.save_doc(ENRICHMENT_REPORT_FILE, report.to_dict())
        store.close_stage(Stage.PROCESSED, [store.file(n) for n in STAGE_ARTIFACTS["processed"]])
        return {
            "stage": "processed",
            "status": "closed",
            "records": len(out),
            "attempted": report.attempted,
            "filled": report.filled,
            "still_missing": sorted(report.still_missing),
        }


# -- prompt generation and approval --------------------------------------------


def cmd_prompts_generate(config: PipelineConfig) -> dict:
    store = open_store(config)
    with store.lock():
        if store.load_doc(PROMPTS_FILE) is not None:
            return {"status": "skipped", "reason": "prompts already generated"}
        assistant = config.model_for("prompt_generation", "assistant")
        evaluator = config.model_for("prompt_generation", "evaluator")
        if assistant.model == evaluator.model and not config.allow_same_models:
            raise ModelDistinctnessError(
                f"prompt_generation: assistant and evaluator are both {assistant.model!r}"
            )
        provider = make_provider(config)
        with ExchangeLog(store.exchanges_path) as audit:
            prompt_set = generate_prompts(config.brief, assistant, evaluator, provider, audit=audit)
        store.save_doc(PROMPTS_FILE, prompt_set.to_dict())
        return {
            "status": "generated",
            "entries": [
                {"phase": phase, "role": role, "state": prompt_set.entries[(phase, role)].approval.state}
                for phase, role in sorted(prompt_set.entries)
            ],
        }


def load_prompt_set(store: CheckpointStore) -> Optional[PromptSet]:
    doc = store.load_doc(PROMPTS_FILE)
    return None if doc is None else PromptSet.from_dict(doc)


def approve_prompt(
    store: CheckpointStore,
    phase: str,
    role: str,
    decision: str,
    reviewer: str = "",
    note: str = "",
    at: str = "",
) -> dict:
    """Shared by the CLI and the API so both leave identical state behind.

    Raises KeyError for an unknown entry and ValueError for a decision the
    entry cannot take (already approved, missing reviewer, bad decision).
    """
    prompt_set = load_prompt_set(store)
    if prompt_set is None:
        raise KeyError("prompts have not been generated yet")
    prompt_set = gate_approval(prompt_set, (phase, role), decision, reviewer=reviewer, note=note, at=at)
    store.save_doc(PROMPTS_FILE, prompt_set.to_dict())
    entry = prompt_set.get(phase, role)
    return {
        "phase": phase,
        "role": role,
        "state": entry.approval.state,
        "phase_eligible": prompt_set.phase_eligible(phase),
    }


def cmd_prompts_approve(config, phase, role, decision, reviewer="", note="", at="") -> dict:
    store = open_store(config)
    with store.lock():
        return approve_prompt(store, phase, role, decision, reviewer=reviewer, note=note, at=at)


# -- agent stages ---------------------------------------------------------------


def stage_input_records(store: CheckpointStore, stage: str) -> list:
    """QC screens everything processed; each later stage screens the previous
    stage's Includes."""
    records = read_records_csv(store.file(PROCESSED_FILE))
    if stage == "quality_control":
        return records
    previous = {"screening": "quality_control", "relevance": "screening"}[stage]
    included = {
        row["record_id"] for row in store.read_outcomes(previous) if row["label"] == Label.INCLUDE.value
    }
    return [r for r in records if r.id in included]


def cmd_run_stage(config: PipelineConfig, stage: str) -> dict:
    stage = getattr(stage, "value", stage)
    if stage not in PHASE_STAGES:
        raise PipelineError(f"not an agent stage: {stage!r}")
    store = open_store(config)
    with store.lock():
        store.require_predecessor(stage)
        if store.is_closed(stage):
            return {"stage": stage, "status": "skipped", "reason": "already closed"}

        prompt_set = load_prompt_set(store)
        if prompt_set is None:
            raise PipelineError("prompts have not been generated yet")
        models = {"assistant": config.model_for(stage, "assistant")}
        if stage in DUAL_STAGES:
            models["evaluator"] = config.model_for(stage, "evaluator")
        provider = make_provider(config)

        records = stage_input_records(store, stage)
        done_ids = {row["record_id"] for row in store.repair_outcomes(stage)}

        with ExchangeLog(store.exchanges_path) as audit:
            run = PhaseRun(
                stage,
                prompt_set,
                models,
                provider,
                audit=audit,
                concurrency=config.concurrency,
                allow_same_models=config.allow_same_models,
            )
            with store.outcome_writer(stage) as sink:
                outcomes, parked = run.execute(records, done_ids=done_ids, sink=sink)
        store.write_parked(stage, [p.to_dict() for p in parked])

        decided = len(done_ids) + len(outcomes)
        summary = {
            "stage": stage,
            "status": "open",
            "records": len(records),
            "decided": decided,
            "parked": len(parked),
            "included": sum(
                1 for row in store.read_outcomes(stage) if row["label"] == Label.INCLUDE.value
            ),
        }
        if not parked and decided == len(records):
            store.close_stage(stage, [store.outcome_path(stage)])
            summary["status"] = "closed"
        return summary


# -- reporting ------------------------------------------------------------------


def _load_outcomes(store: CheckpointStore, stage: str) -> list:
    return [StageOutcome.from_dict(row) for row in store.read_outcomes(stage)]


def load_record_store(store: CheckpointStore) -> list:
    for name in (PROCESSED_FILE, RECORDS_FILE):
        path = store.file(name)
        if path.exists():
            return read_records_csv(path)
    return []


def _read_rejections(store: CheckpointStore) -> list:
    path = store.file(REJECTIONS_FILE)
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def build_funnel_report(store: CheckpointStore) -> FunnelReport:
    records = load_record_store(store)
    dedup_path = store.file(DEDUP_LOG_FILE)
    dedup_log = DedupLog.read(dedup_path) if dedup_path.exists() else None
    # a stage contributes a column only once it is sealed; live counts belong
    # to the progress report, not the funnel
    outcomes_by_stage = {
        stage: _load_outcomes(store, stage) for stage in PHASE_STAGES if store.is_closed(stage)
    }
    return build_funnel(
        records,
        outcomes_by_stage,
        dedup_log=dedup_log,
        rejections=_read_rejections(store),
    )


def cmd_report_funnel(config: PipelineConfig, fmt: str = "csv") -> str:
    report = build_funnel_report(open_store(config))
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if fmt == "csv":
        return report.to_csv()
    raise PipelineError(f"unknown funnel format: {fmt!r}")


def progress_report(store: CheckpointStore) -> dict:
    """Live decided/parked/pending counts per agent stage."""
    stages = {}
    for stage in PHASE_STAGES:
        decided = len(store.read_outcomes(stage))
        parked = len(store.read_parked(stage))
        entry = {
            "decided": decided,
            "parked": parked,
            "pending": None,
            "closed": store.is_closed(stage),
        }
        try:
            store.require_predecessor(stage)
        except Exception:
            stages[stage] = entry
            continue
        if store.file(PROCESSED_FILE).exists():
            total = len(stage_input_records(store, stage))
            entry["pending"] = max(total - decided - parked, 0)
        stages[stage] = entry
    return {"stages": stages, "closed": store.closed_stages()}


# -- false-negative audit ---------------------------------------------------------


def excluded_ids(store: CheckpointStore, stage: str) -> list:
    return sorted(
        row["record_id"] for row in store.read_outcomes(stage) if row["label"] == Label.EXCLUDE.value
    )


def load_fn_samples(store: CheckpointStore) -> list:
    doc = store.load_doc(FN_SAMPLES_FILE, default=[])
    return [FnSample.from_dict(entry) for entry in doc]


def cmd_fn_sample(config: PipelineConfig, stage: str, n: int, seed=None, sheet_path=None) -> dict:
    if stage not in DUAL_STAGES:
        raise PipelineError(f"false-negative sampling applies to {sorted(DUAL_STAGES)}, not {stage!r}")
    store = open_store(config)
    with store.lock():
        if not store.is_closed(stage):
            raise ReviewConflict(f"stage {stage} is not closed yet; its excluded set is still moving")
        samples = load_fn_samples(store)
        if any(s.stage == stage for s in samples):
            raise ReviewConflict(f"a sample for {stage} was already drawn")
        sample = sample_excluded(stage, n, config.seed if seed is None else seed, excluded_ids(store, stage))
        samples.append(sample)
        store.save_doc(FN_SAMPLES_FILE, [s.to_dict() for s in samples])
        result = {"stage": stage, "n": n, "seed": sample.seed, "record_ids": list(sample.record_ids)}
        if sheet_path:
            records_by_id = {r.id: r for r in load_record_store(store)}
            Path(sheet_path).write_text(export_sample_sheet(sample, records_by_id), encoding="utf-8")
            result["sheet"] = str(sheet_path)
        return result


def manual_labels(store: CheckpointStore) -> dict:
    return store.load_doc(MANUAL_LABELS_FILE, default={})


def _awaiting_review(store: CheckpointStore, record_id: str) -> bool:
    for sample in load_fn_samples(store):
        if record_id in sample.record_ids:
            return True
    for row in store.read_outcomes("quality_control"):
        if row["record_id"] == record_id and FLAG_NEEDS_VERIFICATION in row.get("flags", []):
            return True
    return False


def set_manual_label(store: CheckpointStore, record_id: str, label: str, by: str, note: str = "") -> dict:
    """Record a human judgement for a record that is waiting on one.

    Raises KeyError when the record is unknown and ValueError when it is not
    in any review queue or was already labelled: silent relabels would let two
    reviewers overwrite each other without noticing.
    """
    if not by:
        raise ValueError("a reviewer id is required")
    parsed = parse_label(label)
    if not any(r.id == record_id for r in load_record_store(store)):
        raise KeyError(f"unknown record: {record_id}")
    if not _awaiting_review(store, record_id):
        raise ReviewConflict(f"record {record_id} is not awaiting human review")
    labels = manual_labels(store)
    if record_id in labels:
        raise ReviewConflict(f"record {record_id} already has a manual label")
    labels[record_id] = {"label": parsed.value, "by": by, "note": note}
    store.save_doc(MANUAL_LABELS_FILE, labels)
    return {"record_id": record_id, **labels[record_id]}


def _labelled_samples(store: CheckpointStore, extra_labels=None) -> list:
    labels = {rid: parse_label(entry["label"]) for rid, entry in manual_labels(store).items()}
    if extra_labels:
        labels.update(extra_labels)
    out = []
    for sample in load_fn_samples(store):
        merged = dict(sample.labels)
        merged.update({rid: labels[rid] for rid in sample.record_ids if rid in labels})
        out.append(FnSample(sample.stage, sample.record_ids, sample.seed, sample.drawn_at, merged))
    return out


def fn_population(store: CheckpointStore, samples: list) -> int:
    return sum(len(excluded_ids(store, stage)) for stage in sorted({s.stage for s in samples}))


def compute_fn_estimate(store: CheckpointStore, population=None, extra_labels=None) -> dict:
    samples = _labelled_samples(store, extra_labels)
    if not samples:
        raise PipelineError("no false-negative samples drawn yet")
    if population is None:
        population = fn_population(store, samples)
    estimate = extrapolate(samples, population)
    return estimate.to_dict()


def cmd_fn_estimate(config: PipelineConfig, population=None, labels_csv=None) -> dict:
    from .validation import import_sample_labels

    store = open_store(config)
    with store.lock():
        extra = None
        if labels_csv:
            extra = import_sample_labels(Path(labels_csv).read_text(encoding="utf-8"))
        result = compute_fn_estimate(store, population=population, extra_labels=extra)
        store.save_doc(FN_ESTIMATE_FILE, result)
        return result


# -- conflict and record views (shared with the API) -------------------------------


def conflict_outcomes(store: CheckpointStore) -> list:
    rows = []
    for stage in DUAL_STAGES:
        for outcome in _load_outcomes(store, stage):
            if outcome.transcript is not None:
                rows.append(outcome)
    rows.sort(key=lambda o: (o.record_id, o.stage))
    return rows


def transcript_with_exchanges(store: CheckpointStore, outcome: StageOutcome) -> dict:
    index = load_exchange_index(store.exchanges_path)
    exchanges = {}
    for ref in outcome.refs():
        hit = index.get(ref)
        exchanges[ref] = hit.to_dict() if hit else None
    return {"outcome": outcome.to_dict(), "exchanges": exchanges}
