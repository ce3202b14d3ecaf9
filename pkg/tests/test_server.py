"""API surface tests: every route, the status-code contract, and the
guarantee that HTTP and CLI mutations leave identical checkpoint state."""
import shutil

import pytest
from fastapi.testclient import TestClient

from test_pipeline import approve_all, build_small_review
from slrscreen.config import load_config
from slrscreen.pipeline import (
    PROMPTS_FILE,
    cmd_enrich,
    cmd_ingest,
    cmd_prompts_approve,
    cmd_prompts_generate,
    cmd_run_stage,
)
from slrscreen.server import create_app


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("api") / "rev"
    fx = build_small_review(root)
    config = load_config(fx["config"])
    cmd_ingest(config)
    cmd_enrich(config)
    cmd_prompts_generate(config)
    approve_all(config)
    for stage in ("quality_control", "screening", "relevance"):
        cmd_run_stage(config, stage)
    return {**fx, "root": root}


@pytest.fixture()
def api(corpus, tmp_path):
    """Fresh copy per test so mutations cannot leak between tests."""
    root = tmp_path / "copy"
    shutil.copytree(corpus["root"], root)
    config = load_config(root / "review.yaml")
    client = TestClient(create_app(config))
    return client, corpus["ids"], root


def test_funnel_endpoint(api):
    client, ids, _ = api
    body = client.get("/funnel").json()
    assert body["totals"] == {"raw": 10, "processed": 7, "quality_control": 5,
                              "screening": 3, "relevance": 1}
    assert body["rows"]["IEEE"]["screening"] == 1


def test_progress_endpoint(api):
    client, _, _ = api
    body = client.get("/progress").json()
    assert "relevance" in body["closed"]
    assert body["stages"]["screening"]["decided"] == 5


def test_prompts_listing_and_eligibility(api):
    client, _, _ = api
    body = client.get("/prompts").json()
    assert len(body["entries"]) == 5
    assert all(e["approval"]["state"] == "approved" for e in body["entries"])
    assert body["eligibility"] == {"screening": True, "relevance": True,
                                   "quality_control": True}


def test_prompts_404_before_generation(api):
    client, _, root = api
    (root / "ckpt" / PROMPTS_FILE).unlink()
    assert client.get("/prompts").status_code == 404
    assert client.get("/prompts").json()["detail"].startswith("prompts have not")


def test_approval_conflicts_surface_as_409(api):
    client, _, _ = api
    again = client.post("/prompts/screening/assistant/approval",
                        json={"decision": "approved", "reviewer": "rt"})
    assert again.status_code == 409
    unknown = client.post("/prompts/screening/oracle/approval",
                          json={"decision": "approved", "reviewer": "rt"})
    assert unknown.status_code == 404


def test_bad_approval_decisions_are_422(tmp_path):
    fx = build_small_review(tmp_path / "rev")
    cmd_prompts_generate(load_config(fx["config"]))
    client = TestClient(create_app(load_config(fx["config"])))
    bad = client.post("/prompts/screening/assistant/approval",
                      json={"decision": "maybe", "reviewer": "rt"})
    assert bad.status_code == 422
    unsigned = client.post("/prompts/screening/assistant/approval",
                           json={"decision": "approved"})
    assert unsigned.status_code == 422


def test_verification_queue_lists_flagged_records(api):
    client, ids, _ = api
    queue = client.get("/queue/verification").json()
    assert [q["record_id"] for q in queue] == [ids["i2"]]
    assert queue[0]["title"].startswith("sparse annotation")
    assert queue[0]["manual_label"] is None

    resp = client.post(f"/records/{ids['i2']}/manual-label",
                       json={"label": "Exclude", "by": "rt", "note": "checked by hand"})
    assert resp.status_code == 200
    queue = client.get("/queue/verification").json()
    assert queue[0]["manual_label"]["label"] == "Exclude"


def test_manual_label_status_codes(api):
    client, ids, _ = api
    assert client.post("/records/nope/manual-label",
                       json={"label": "Include", "by": "rt"}).status_code == 404
    assert client.post(f"/records/{ids['a1']}/manual-label",
                       json={"label": "Include", "by": "rt"}).status_code == 409
    assert client.post(f"/records/{ids['i2']}/manual-label",
                       json={"label": "Perhaps", "by": "rt"}).status_code == 422
    client.post(f"/records/{ids['i2']}/manual-label", json={"label": "Include", "by": "rt"})
    dup = client.post(f"/records/{ids['i2']}/manual-label",
                      json={"label": "Include", "by": "rt2"})
    assert dup.status_code == 409


def test_conflicts_listing(api):
    client, ids, _ = api
    rows = client.get("/conflicts").json()
    assert len(rows) == 4
    by_key = {(r["record_id"], r["stage"]): r for r in rows}
    i1 = by_key[(ids["i1"], "screening")]
    assert i1["mechanism"] == "inclusion_default"
    assert i1["round"] is None
    assert i1["rounds"] == 3
    a4 = by_key[(ids["a4"], "screening")]
    assert (a4["mechanism"], a4["round"], a4["label"]) == ("dialogue_agreement", 1, "Exclude")


def test_conflict_transcript_round_trip(api):
    client, ids, _ = api
    body = client.get(f"/conflicts/{ids['i1']}/transcript").json()
    assert {t["stage"] for t in body["transcripts"]} == {"screening", "relevance"}
    screening_only = client.get(f"/conflicts/{ids['i1']}/transcript",
                                params={"stage": "screening"}).json()
    assert len(screening_only["transcripts"]) == 1
    exchanges = screening_only["transcripts"][0]["exchanges"]
    assert len(exchanges) == 8
    assert all(x is not None for x in exchanges.values())
    assert client.get(f"/conflicts/{ids['a1']}/transcript").status_code == 404


def test_fn_sampling_routes(api):
    client, _, _ = api
    assert client.get("/fn/samples").json() == []
    assert client.post("/fn/samples", json={"stage": "quality_control", "n": 30}).status_code == 422
    too_big = client.post("/fn/samples", json={"stage": "screening", "n": 30})
    assert too_big.status_code == 422  # population is only two records
    estimate = client.get("/fn/estimate")
    assert estimate.status_code == 409  # nothing sampled yet


def test_record_detail(api):
    client, ids, _ = api
    body = client.get(f"/records/{ids['a2']}").json()
    assert body["record"]["title"].startswith("embedding drift")
    assert body["outcomes"]["screening"]["label"] == "Include"
    assert body["outcomes"]["relevance"]["label"] == "Exclude"
    assert body["manual_label"] is None
    assert client.get("/records/missing").status_code == 404


def test_api_and_cli_leave_identical_state(corpus, tmp_path):
    """Approving through HTTP and through the CLI entry point must write the
    same bytes, or resuming from one surface would diverge from the other."""
    seed_root = tmp_path / "seed"
    fx = build_small_review(seed_root)
    cmd_prompts_generate(load_config(fx["config"]))
    via_cli = tmp_path / "via-cli"
    via_api = tmp_path / "via-api"
    shutil.copytree(seed_root, via_cli)
    shutil.copytree(seed_root, via_api)

    cmd_prompts_approve(load_config(via_cli / "review.yaml"), "screening", "assistant",
                        "approved", reviewer="rt", note="ship it")
    client = TestClient(create_app(load_config(via_api / "review.yaml")))
    resp = client.post("/prompts/screening/assistant/approval",
                       json={"decision": "approved", "reviewer": "rt", "note": "ship it"})
    assert resp.status_code == 200
    assert resp.json()["phase_eligible"] is False

    cli_bytes = (via_cli / "ckpt" / PROMPTS_FILE).read_bytes()
    api_bytes = (via_api / "ckpt" / PROMPTS_FILE).read_bytes()
    assert cli_bytes == api_bytes
