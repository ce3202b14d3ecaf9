import json

import pytest

from slrscreen.checkpoint import (
    CheckpointStore,
    IntegrityError,
    LockHeld,
    ParkedRecordsRemain,
    StageOrderError,
    canonical_line,
)


@pytest.fixture
def store(tmp_path):
    return CheckpointStore(tmp_path / "ckpt")


class TestStageLifecycle:
    def test_close_and_verify(self, store):
        artifact = store.file("records.csv")
        artifact.write_text("id,title\n1,x\n")
        store.close_stage("ingested", [artifact])
        assert store.is_closed("ingested")
        store.verify_stage("ingested")

    def test_tampered_artifact_fails_verification(self, store):
        artifact = store.file("records.csv")
        artifact.write_text("id,title\n1,x\n")
        store.close_stage("ingested", [artifact])
        artifact.write_text("id,title\n1,y\n")
        with pytest.raises(IntegrityError, match="modified"):
            store.verify_stage("ingested")

    def test_missing_artifact_blocks_close(self, store):
        with pytest.raises(IntegrityError, match="missing artifact"):
            store.close_stage("ingested", [store.file("nope.csv")])

    def test_predecessor_ordering(self, store):
        with pytest.raises(StageOrderError) as err:
            store.require_predecessor("processed")
        assert err.value.missing == "ingested"
        artifact = store.file("records.csv")
        artifact.write_text("x\n")
        store.close_stage("ingested", [artifact])
        store.require_predecessor("processed")  # no raise
        with pytest.raises(StageOrderError) as err:
            store.require_predecessor("screening")
        assert err.value.missing == "quality_control"

    def test_first_stage_has_no_predecessor(self, store):
        store.require_predecessor("ingested")

    def test_parked_records_block_close(self, store):
        artifact = store.outcome_path("screening")
        artifact.write_text("")
        store.write_parked("screening", [{"record_id": "a", "reason": "transport"}])
        with pytest.raises(ParkedRecordsRemain):
            store.close_stage("screening", [artifact])
        store.record_override("screening", "operator accepted 1 unreachable record")
        store.close_stage("screening", [artifact])
        assert store.is_closed("screening")

    def test_clearing_the_ledger_unblocks_close(self, store):
        artifact = store.outcome_path("screening")
        artifact.write_text("")
        store.write_parked("screening", [{"record_id": "a", "reason": "transport"}])
        store.write_parked("screening", [])
        store.close_stage("screening", [artifact])


class TestOutcomeStream:
    def test_writer_then_read_back(self, store):
        with store.outcome_writer("screening") as writer:
            writer.write({"record_id": "b", "label": "Include"})
            writer.write({"record_id": "a", "label": "Exclude"})
        assert store.read_outcomes("screening") == [
            {"record_id": "b", "label": "Include"},
            {"record_id": "a", "label": "Exclude"},
        ]

    def test_repair_drops_torn_trailing_line(self, store):
        path = store.outcome_path("screening")
        with store.outcome_writer("screening") as writer:
            writer.write({"record_id": "a"})
            writer.write({"record_id": "b"})
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"record_id": "c", "lab')  # crash mid-write
        assert store.repair_outcomes("screening") == [{"record_id": "a"}, {"record_id": "b"}]
        assert path.read_bytes().endswith(b"\n")
        # the torn bytes are gone for good
        assert b'"c"' not in path.read_bytes()

    def test_repair_of_single_torn_line_empties_the_file(self, store):
        path = store.outcome_path("screening")
        path.write_text('{"record_id": "a"')
        assert store.repair_outcomes("screening") == []
        assert path.read_bytes() == b""

    def test_missing_and_empty_files(self, store):
        assert store.read_outcomes("screening") == []
        store.outcome_path("screening").write_text("")
        assert store.read_outcomes("screening") == []

    def test_corrupt_complete_line_is_an_integrity_error(self, store):
        store.outcome_path("screening").write_text("not json\n")
        with pytest.raises(IntegrityError, match="outcomes_screening.jsonl:1"):
            store.read_outcomes("screening")

    def test_canonical_line_is_key_stable(self):
        assert canonical_line({"b": 1, "a": [2, 3]}) == '{"a":[2,3],"b":1}'


class TestDocsAndLocks:
    def test_doc_round_trip(self, store):
        store.save_doc("prompts.json", {"entries": [1, 2]})
        assert store.load_doc("prompts.json") == {"entries": [1, 2]}
        assert store.load_doc("absent.json", default={}) == {}

    def test_atomic_doc_leaves_no_tmp(self, store):
        store.save_doc("manual_labels.json", {"a": "Include"})
        assert not list(store.directory.glob("*.tmp"))

    def test_parked_ledger_round_trip(self, store):
        entries = [{"record_id": "a", "reason": "transport: boom", "partial_rounds": []}]
        store.write_parked("relevance", entries)
        assert store.read_parked("relevance") == entries
        assert store.read_parked("screening") == []

    def test_lock_excludes_second_holder(self, store):
        with store.lock():
            with pytest.raises(LockHeld):
                with store.lock():
                    pass
        # released: can take it again
        with store.lock():
            pass

    def test_state_file_is_valid_json(self, store):
        artifact = store.file("a.txt")
        artifact.write_text("x")
        store.close_stage("ingested", [artifact])
        state = json.loads(store.file("state.json").read_text())
        assert "a.txt" in state["closed"]["ingested"]["files"]
