"""HTTP front end over a checkpoint directory.

Read routes serve the review team's dashboards; the few mutating routes
(prompt approval, manual labels, false-negative samples) call the same
functions as the CLI so either entry point leaves identical state behind.
"""

import threading
from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel

from .checkpoint import CheckpointStore
from .config import PipelineConfig
from .pipeline import (
    ReviewConflict,
    build_funnel_report,
    compute_fn_estimate,
    conflict_outcomes,
    excluded_ids,
    load_fn_samples,
    load_prompt_set,
    load_record_store,
    manual_labels,
    progress_report,
    approve_prompt,
    set_manual_label,
    transcript_with_exchanges,
    PipelineError,
    FN_SAMPLES_FILE,
)
from .promptforge import ApprovalConflict, REQUIRED_KEYS, QC_KEY
from .records import Label
from .stages import DUAL_STAGES, FLAG_NEEDS_VERIFICATION, PHASE_STAGES
from .validation import (
    InsufficientPopulationError,
    IncompleteLabelsError,
    MinimumSampleError,
    sample_excluded,
)


class ApprovalBody(BaseModel):
    decision: str
    reviewer: str = ""
    note: str = ""
    at: str = ""


class ManualLabelBody(BaseModel):
    label: str
    by: str
    note: str = ""


class FnSampleBody(BaseModel):
    stage: str
    n: int
    seed: Optional[int] = None


def _record_dict(record) -> dict:
    return {
        "id": record.id,
        "title": record.title,
        "year": record.year,
        "abstract": record.abstract,
        "abstract_provenance": record.abstract_provenance.encode(),
        "doi": record.doi,
        "authors": list(record.authors),
        "venue": record.venue,
        "pub_type": record.pub_type.value,
        "url": record.url,
        "sources": sorted(record.sources),
    }


def create_app(config: PipelineConfig) -> FastAPI:
    app = FastAPI(title="slrscreen", version="1.0")
    store = CheckpointStore(config.checkpoint_dir)
    # one writer at a time; the process-level directory lock is held by the
    # serve command, so in here a plain mutex is enough
    mutex = threading.Lock()

    def prompt_set_or_404():
        prompt_set = load_prompt_set(store)
        if prompt_set is None:
            raise HTTPException(404, detail="prompts have not been generated yet")
        return prompt_set

    @app.get("/funnel")
    def funnel():
        return build_funnel_report(store).to_dict()

    @app.get("/progress")
    def progress():
        return progress_report(store)

    @app.get("/prompts")
    def prompts():
        prompt_set = prompt_set_or_404()
        entries = []
        for (phase, role), entry in sorted(prompt_set.entries.items()):
            entries.append(
                {
                    "phase": phase,
                    "role": role,
                    "text": entry.text,
                    "iterations": len(entry.transcript) // 2,
                    "approval": entry.approval.to_dict(),
                }
            )
        eligibility = {
            phase: prompt_set.phase_eligible(phase)
            for phase in dict.fromkeys(k[0] for k in (*REQUIRED_KEYS, QC_KEY))
        }
        return {"entries": entries, "eligibility": eligibility}

    @app.post("/prompts/{phase}/{role}/approval")
    def approve(phase: str, role: str, body: ApprovalBody):
        with mutex:
            try:
                return approve_prompt(
                    store, phase, role, body.decision,
                    reviewer=body.reviewer, note=body.note, at=body.at,
                )
            except KeyError as exc:
                raise HTTPException(404, detail=str(exc))
            except ApprovalConflict as exc:
                raise HTTPException(409, detail=str(exc))
            except ValueError as exc:
                raise HTTPException(422, detail=str(exc))

    @app.get("/queue/verification")
    def verification_queue():
        labels = manual_labels(store)
        records_by_id = {r.id: r for r in load_record_store(store)}
        queue = []
        for row in store.read_outcomes("quality_control"):
            if FLAG_NEEDS_VERIFICATION not in row.get("flags", []):
                continue
            record = records_by_id.get(row["record_id"])
            queue.append(
                {
                    "record_id": row["record_id"],
                    "title": record.title if record else None,
                    "abstract": record.abstract if record else None,
                    "label": row["label"],
                    "flags": row["flags"],
                    "manual_label": labels.get(row["record_id"]),
                }
            )
        return queue

    @app.post("/records/{record_id}/manual-label")
    def manual_label(record_id: str, body: ManualLabelBody):
        with mutex:
            try:
                return set_manual_label(store, record_id, body.label, body.by, note=body.note)
            except KeyError as exc:
                raise HTTPException(404, detail=str(exc))
            except ReviewConflict as exc:
                raise HTTPException(409, detail=str(exc))
            except ValueError as exc:
                raise HTTPException(422, detail=str(exc))

    @app.get("/conflicts")
    def conflicts():
        return [
            {
                "record_id": o.record_id,
                "stage": o.stage,
                "label": o.label.value,
                "mechanism": o.mechanism,
                "round": o.round,
                "rounds": len(o.transcript.rounds),
            }
            for o in conflict_outcomes(store)
        ]

    @app.get("/conflicts/{record_id}/transcript")
    def conflict_transcript(record_id: str, stage: Optional[str] = Query(default=None)):
        hits = [
            o for o in conflict_outcomes(store)
            if o.record_id == record_id and (stage is None or o.stage == stage)
        ]
        if not hits:
            raise HTTPException(404, detail=f"no dialogue transcript for record {record_id}")
        return {
            "record_id": record_id,
            "transcripts": [
                {"stage": o.stage, **transcript_with_exchanges(store, o)} for o in hits
            ],
        }

    @app.get("/fn/samples")
    def fn_samples():
        labels = {rid: entry["label"] for rid, entry in manual_labels(store).items()}
        out = []
        for sample in load_fn_samples(store):
            merged = {rid: label.value for rid, label in sample.labels.items()}
            merged.update({rid: labels[rid] for rid in sample.record_ids if rid in labels})
            missing = [rid for rid in sample.record_ids if rid not in merged]
            out.append(
                {
                    "stage": sample.stage,
                    "seed": sample.seed,
                    "record_ids": list(sample.record_ids),
                    "labels": merged,
                    "fn_count": sum(1 for v in merged.values() if v == Label.INCLUDE.value),
                    "missing": missing,
                }
            )
        return out

    @app.post("/fn/samples")
    def draw_fn_sample(body: FnSampleBody):
        if body.stage not in DUAL_STAGES:
            raise HTTPException(422, detail=f"stage must be one of {sorted(DUAL_STAGES)}")
        with mutex:
            if not store.is_closed(body.stage):
                raise HTTPException(409, detail=f"stage {body.stage} is not closed yet")
            samples = load_fn_samples(store)
            if any(s.stage == body.stage for s in samples):
                raise HTTPException(409, detail=f"a sample for {body.stage} was already drawn")
            seed = config.seed if body.seed is None else body.seed
            try:
                sample = sample_excluded(body.stage, body.n, seed, excluded_ids(store, body.stage))
            except (MinimumSampleError, InsufficientPopulationError) as exc:
                raise HTTPException(422, detail=str(exc))
            samples.append(sample)
            store.save_doc(FN_SAMPLES_FILE, [s.to_dict() for s in samples])
            return {
                "stage": sample.stage,
                "seed": sample.seed,
                "n": body.n,
                "record_ids": list(sample.record_ids),
            }

    @app.get("/fn/estimate")
    def fn_estimate(population: Optional[int] = Query(default=None)):
        try:
            return compute_fn_estimate(store, population=population)
        except IncompleteLabelsError as exc:
            raise HTTPException(409, detail={"message": "labels incomplete", "missing": exc.missing})
        except PipelineError as exc:
            raise HTTPException(409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(422, detail=str(exc))

    @app.get("/records/{record_id}")
    def record_detail(record_id: str):
        record = next((r for r in load_record_store(store) if r.id == record_id), None)
        if record is None:
            raise HTTPException(404, detail=f"unknown record: {record_id}")
        outcomes = {}
        for stage in PHASE_STAGES:
            for row in store.read_outcomes(stage):
                if row["record_id"] == record_id:
                    outcomes[stage] = row
        return {
            "record": _record_dict(record),
            "outcomes": outcomes,
            "manual_label": manual_labels(store).get(record_id),
        }

    return app
