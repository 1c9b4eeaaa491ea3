"""On-disk layout for pipeline runs: one directory per scan, JSON artifacts
per stage, JSONL journals at the root, and final dataset files at the top.

Every writer goes through an atomic temp-file-plus-rename so a killed stage
never leaves a half-written artifact visible. Status is derived purely from
which files exist, so there is no separate state database to drift.
"""

from __future__ import annotations

import hashlib
import json
import os
import urllib.parse
from pathlib import Path

STAGES = (
    "ingest",
    "scenarios",
    "prune-propose",
    "review",
    "prune-apply",
    "dialogue",
    "split",
    "emit",
    "stats",
)

STATE_PENDING = "pending"
STATE_RUNNING = "running"
STATE_DONE = "done"


class WorkspaceError(Exception):
    pass


class LockHeld(WorkspaceError):
    def __init__(self, path: Path, owner: str):
        super().__init__(f"workspace lock {path} is held by {owner}")
        self.owner = owner


class MissingPredecessor(WorkspaceError):
    def __init__(self, stage: str, needed: str):
        super().__init__(f"stage {stage!r} requires {needed} first")
        self.stage = stage
        self.needed = needed


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path: Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _scan_dirname(scan_id: str) -> str:
    # Scan ids come from external catalogs; quote anything unsafe on disk.
    return urllib.parse.quote(scan_id, safe="abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    def ensure(self) -> "Workspace":
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    # ---- paths ------------------------------------------------------------

    @property
    def catalog_path(self) -> Path:
        return self.root / "catalog.json"

    def scan_dir(self, scan_id: str) -> Path:
        return self.root / "scans" / _scan_dirname(scan_id)

    def scenarios_path(self, scan_id: str) -> Path:
        return self.scan_dir(scan_id) / "scenarios.json"

    def proposals_path(self, scan_id: str) -> Path:
        return self.scan_dir(scan_id) / "proposals.json"

    def pruned_path(self, scan_id: str) -> Path:
        return self.scan_dir(scan_id) / "pruned.json"

    def records_path(self, scan_id: str) -> Path:
        return self.scan_dir(scan_id) / "records.json"

    @property
    def decisions_path(self) -> Path:
        return self.root / "decisions.jsonl"

    @property
    def gateway_log_path(self) -> Path:
        return self.root / "gateway.jsonl"

    @property
    def split_path(self) -> Path:
        return self.root / "split.json"

    @property
    def train_path(self) -> Path:
        return self.root / "train-instruct.jsonl"

    @property
    def test_path(self) -> Path:
        return self.root / "test-instruct.jsonl"

    @property
    def stats_path(self) -> Path:
        return self.root / "stats.json"

    @property
    def train_manifest_path(self) -> Path:
        return self.root / "train_manifest.json"

    @property
    def lock_path(self) -> Path:
        return self.root / ".lock"

    # ---- catalog access ---------------------------------------------------

    def scan_ids(self) -> list:
        doc = read_json(self.catalog_path)
        return [record["scan_id"] for record in doc["records"]]

    # ---- stage completion -------------------------------------------------

    def _per_scan_state(self, path_fn) -> tuple:
        try:
            ids = self.scan_ids()
        except FileNotFoundError:
            return 0, 0
        done = sum(1 for scan_id in ids if path_fn(scan_id).exists())
        return done, len(ids)

    def stage_state(self, stage: str, decided_count_fn=None) -> dict:
        """State row for one stage, derived from artifact files."""
        if stage == "ingest":
            return self._file_state(stage, self.catalog_path)
        if stage == "scenarios":
            return self._scan_stage_state(stage, self.scenarios_path)
        if stage == "prune-propose":
            return self._scan_stage_state(stage, self.proposals_path)
        if stage == "review":
            total = self._proposal_count()
            decided = decided_count_fn() if decided_count_fn else 0
            if total == 0:
                state = STATE_PENDING
            elif decided >= total:
                state = STATE_DONE
            else:
                state = STATE_RUNNING if decided else STATE_PENDING
            return {"stage": stage, "state": state, "detail": f"{decided}/{total} decided", "digest": None}
        if stage == "prune-apply":
            return self._scan_stage_state(stage, self.pruned_path)
        if stage == "dialogue":
            return self._scan_stage_state(stage, self.records_path)
        if stage == "split":
            return self._file_state(stage, self.split_path)
        if stage == "emit":
            state = self._file_state(stage, self.train_path)
            if state["state"] == STATE_DONE and not self.test_path.exists():
                state["state"] = STATE_RUNNING
            return state
        if stage == "stats":
            return self._file_state(stage, self.stats_path)
        raise ValueError(f"unknown stage {stage!r}")

    def _file_state(self, stage: str, path: Path) -> dict:
        if path.exists():
            return {"stage": stage, "state": STATE_DONE, "detail": path.name, "digest": file_digest(path)}
        return {"stage": stage, "state": STATE_PENDING, "detail": path.name, "digest": None}

    def _scan_stage_state(self, stage: str, path_fn) -> dict:
        done, total = self._per_scan_state(path_fn)
        if total == 0 or done == 0:
            state = STATE_PENDING
        elif done == total:
            state = STATE_DONE
        else:
            state = STATE_RUNNING
        return {"stage": stage, "state": state, "detail": f"{done}/{total} scans", "digest": None}

    def _proposal_count(self) -> int:
        try:
            ids = self.scan_ids()
        except FileNotFoundError:
            return 0
        count = 0
        for scan_id in ids:
            path = self.proposals_path(scan_id)
            if path.exists():
                count += len(read_json(path))
        return count

    def status_rows(self, decided_count_fn=None) -> list:
        return [self.stage_state(stage, decided_count_fn) for stage in STAGES]

    # ---- fresh reset --------------------------------------------------------

    def clear_derived(self) -> None:
        """Remove generated artifacts; review decisions are kept (human input)."""
        for path in (
            self.catalog_path,
            self.gateway_log_path,
            self.split_path,
            self.train_path,
            self.test_path,
            self.stats_path,
            self.train_manifest_path,
        ):
            if path.exists():
                path.unlink()
        scans_root = self.root / "scans"
        if scans_root.exists():
            for scan_dir in scans_root.iterdir():
                for child in scan_dir.iterdir():
                    child.unlink()
                scan_dir.rmdir()
            scans_root.rmdir()


class WorkspaceLock:
    """Advisory exclusive lock so decision writers and prune-apply never race."""

    def __init__(self, workspace: Workspace, owner: str):
        self.path = workspace.lock_path
        self.owner = owner
        self._held = False

    def acquire(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = self.path.read_text(encoding="utf-8").strip() or "unknown"
            raise LockHeld(self.path, holder) from None
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(f"{self.owner} pid={os.getpid()}\n")
        self._held = True

    def release(self) -> None:
        if self._held:
            try:
                self.path.unlink()
            except FileNotFoundError:
                pass
            self._held = False

    def __enter__(self) -> "WorkspaceLock":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()
