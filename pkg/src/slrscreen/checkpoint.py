"""Checkpoint directory: the single source of truth a pipeline run leaves
behind. Plain JSON documents plus append-only JSON Lines, so every artifact
diffs cleanly and survives a kill at any byte."""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
from pathlib import Path
from typing import Optional

from .records import Stage, stage_predecessor

STATE_FILE = "state.json"
LOCK_FILE = "lock"
EXCHANGES_FILE = "exchanges.jsonl"


class CheckpointError(Exception):
    pass


class LockHeld(CheckpointError):
    def __init__(self, directory):
        super().__init__(f"another pipeline instance owns {directory}")


class StageOrderError(CheckpointError):
    def __init__(self, stage: str, missing: str):
        self.stage = stage
        self.missing = missing
        super().__init__(f"cannot run {stage}: predecessor stage {missing!r} is not closed")


class IntegrityError(CheckpointError):
    pass


class ParkedRecordsRemain(CheckpointError):
    def __init__(self, stage: str, count: int):
        super().__init__(
            f"{count} parked record(s) in {stage}; rerun the stage or record an override"
        )


def canonical_line(data: dict) -> str:
    # one stable byte representation per object, so resumed runs reproduce
    # files exactly
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class OutcomeWriter:
    """Append sink for one stage's outcome stream. Each write is a full line
    followed by a flush: a crash can only ever lose or truncate the final
    line, never corrupt an earlier one."""

    def __init__(self, path: Path):
        self._fh = open(path, "a", encoding="utf-8")

    def write(self, data: dict):
        self._fh.write(canonical_line(data) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _Lock:
    def __init__(self, path: Path):
        self._path = path
        self._fd = None

    def __enter__(self):
        self._fd = os.open(self._path, os.O_CREAT | os.O_RDWR, 0o644)
        try:
            fcntl.flock(self._fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            os.close(self._fd)
            self._fd = None
            raise LockHeld(self._path.parent)
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            fcntl.flock(self._fd, fcntl.LOCK_UN)
            os.close(self._fd)
            self._fd = None


class CheckpointStore:
    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    # -- paths ------------------------------------------------------------

    def file(self, name: str) -> Path:
        return self.directory / name

    def outcome_path(self, stage: str) -> Path:
        return self.file(f"outcomes_{stage}.jsonl")

    def parked_path(self, stage: str) -> Path:
        return self.file(f"parked_{stage}.json")

    @property
    def exchanges_path(self) -> Path:
        return self.file(EXCHANGES_FILE)

    def lock(self) -> _Lock:
        """Exclusive ownership of the directory; batch commands and serve may
        not run concurrently against the same checkpoint."""
        return _Lock(self.file(LOCK_FILE))

    # -- state document ----------------------------------------------------

    def load_state(self) -> dict:
        path = self.file(STATE_FILE)
        if not path.exists():
            return {"closed": {}, "overrides": {}}
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def _save_state(self, state: dict):
        self._write_atomic(STATE_FILE, json.dumps(state, indent=2, sort_keys=True) + "\n")

    def _write_atomic(self, name: str, text: str):
        tmp = self.file(name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.file(name))

    # -- stage lifecycle ----------------------------------------------------

    def is_closed(self, stage) -> bool:
        stage = getattr(stage, "value", stage)
        return stage in self.load_state()["closed"]

    def closed_stages(self) -> list:
        return list(self.load_state()["closed"])

    def require_predecessor(self, stage):
        stage_enum = Stage(getattr(stage, "value", stage))
        previous = stage_predecessor(stage_enum)
        if previous is not None and not self.is_closed(previous):
            raise StageOrderError(stage_enum.value, previous.value)

    def close_stage(self, stage, files: list):
        """Seal a stage: digest its artifacts and refuse while records are
        still parked (unless an override was recorded)."""
        stage = getattr(stage, "value", stage)
        state = self.load_state()
        parked = self.read_parked(stage)
        if parked and stage not in state["overrides"]:
            raise ParkedRecordsRemain(stage, len(parked))
        digests = {}
        for path in files:
            path = Path(path)
            if not path.exists():
                raise IntegrityError(f"cannot close {stage}: missing artifact {path}")
            digests[path.name] = _digest(path)
        state["closed"][stage] = {"files": digests}
        self._save_state(state)

    def verify_stage(self, stage):
        stage = getattr(stage, "value", stage)
        entry = self.load_state()["closed"].get(stage)
        if entry is None:
            raise IntegrityError(f"stage {stage} is not closed")
        for name, digest in entry["files"].items():
            path = self.file(name)
            if not path.exists():
                raise IntegrityError(f"stage {stage}: artifact {name} vanished")
            if _digest(path) != digest:
                raise IntegrityError(f"stage {stage}: artifact {name} was modified after close")

    def record_override(self, stage, reason: str):
        stage = getattr(stage, "value", stage)
        state = self.load_state()
        state["overrides"][stage] = reason
        self._save_state(state)

    # -- outcome streams ----------------------------------------------------

    def repair_outcomes(self, stage) -> list:
        """Drop a torn trailing line left by a crash, then return the decoded
        complete lines."""
        path = self.outcome_path(getattr(stage, "value", stage))
        if not path.exists():
            return []
        with open(path, "rb") as fh:
            raw = fh.read()
        if not raw:
            return []
        if not raw.endswith(b"\n"):
            keep = raw.rfind(b"\n") + 1  # 0 when no complete line survives
            with open(path, "r+b") as fh:
                fh.truncate(keep)
            raw = raw[:keep]
        lines = []
        for i, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
            try:
                lines.append(json.loads(line))
            except ValueError as exc:
                raise IntegrityError(f"{path.name}:{i}: undecodable outcome line: {exc}")
        return lines

    def read_outcomes(self, stage) -> list:
        return self.repair_outcomes(stage)

    def outcome_writer(self, stage) -> OutcomeWriter:
        return OutcomeWriter(self.outcome_path(getattr(stage, "value", stage)))

    # -- parked ledger -------------------------------------------------------

    def read_parked(self, stage) -> list:
        path = self.parked_path(getattr(stage, "value", stage))
        if not path.exists():
            return []
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def write_parked(self, stage, entries: list):
        stage = getattr(stage, "value", stage)
        self._write_atomic(
            f"parked_{stage}.json", json.dumps(entries, indent=2, sort_keys=True) + "\n"
        )

    # -- generic JSON documents ----------------------------------------------

    def save_doc(self, name: str, data):
        self._write_atomic(name, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def load_doc(self, name: str, default=None):
        path = self.file(name)
        if not path.exists():
            return default
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
