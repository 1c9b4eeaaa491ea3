"""Scripted mock chat provider for deterministic offline runs.

A cassette is a JSON document of ordered responses per agent role, plus
optional fault injections:

    {
      "chat": {
        "oracle": ["first reply", "second reply"],
        "humanoid": {"scan-a/0": ["done"], "scan-a/1": ["done"]}
      },
      "faults": {"oracle": [{"after": 0, "kind": "timeout"}]}
    }

A role's script is either a flat list (one shared queue) or a map from
session key to list, which keeps replay deterministic when many dialogue
sessions interleave. Faults fire by per-role call index and do not consume
a script entry. Every request is recorded for fidelity assertions.
"""

from __future__ import annotations

import copy
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from .gateway import MalformedResponse, ProviderRejected, TransientError

FAULT_KINDS = ("timeout", "connection", "429", "5xx", "4xx", "malformed")


class CassetteError(ValueError):
    pass


class CassetteSchemaError(CassetteError):
    pass


class ScriptExhausted(CassetteError):
    def __init__(self, role: str, session: Optional[str], calls: int):
        where = f"role {role!r}" + (f" session {session!r}" if session else "")
        super().__init__(f"cassette script for {where} exhausted after {calls} scripted replies")
        self.role = role
        self.session = session


@dataclass(frozen=True)
class Fault:
    after: int
    kind: str


def _check_script(role: str, script: Any) -> None:
    if isinstance(script, list):
        if not all(isinstance(entry, str) for entry in script):
            raise CassetteSchemaError(f"role {role!r}: script entries must be strings")
        return
    if isinstance(script, dict):
        for session, entries in script.items():
            if not isinstance(session, str):
                raise CassetteSchemaError(f"role {role!r}: session keys must be strings")
            if not isinstance(entries, list) or not all(isinstance(e, str) for e in entries):
                raise CassetteSchemaError(f"role {role!r} session {session!r}: entries must be strings")
        return
    raise CassetteSchemaError(f"role {role!r}: script must be a list or a session map")


def _parse_faults(document: Any) -> dict:
    raw = document.get("faults", {})
    if not isinstance(raw, dict):
        raise CassetteSchemaError("'faults' must be an object keyed by role")
    faults: dict[str, dict[int, Fault]] = {}
    for role, entries in raw.items():
        if not isinstance(entries, list):
            raise CassetteSchemaError(f"faults for role {role!r} must be a list")
        by_index: dict[int, Fault] = {}
        for entry in entries:
            if not isinstance(entry, dict) or set(entry) != {"after", "kind"}:
                raise CassetteSchemaError(f"fault entries need exactly 'after' and 'kind': {entry!r}")
            after, kind = entry["after"], entry["kind"]
            if not isinstance(after, int) or isinstance(after, bool) or after < 0:
                raise CassetteSchemaError(f"fault 'after' must be a non-negative integer: {after!r}")
            if kind not in FAULT_KINDS:
                raise CassetteSchemaError(f"unknown fault kind {kind!r}; expected one of {FAULT_KINDS}")
            if after in by_index:
                raise CassetteSchemaError(f"role {role!r}: duplicate fault at call index {after}")
            by_index[after] = Fault(after, kind)
        faults[role] = by_index
    return faults


class MockProvider:
    """Replay cassette responses in order; raise on over-calling."""

    name = "mock"

    def __init__(self, cassette: dict):
        if not isinstance(cassette, dict):
            raise CassetteSchemaError("cassette must be a JSON object")
        unknown = set(cassette) - {"chat", "faults"}
        if unknown:
            raise CassetteSchemaError(f"unknown cassette sections: {sorted(unknown)}")
        scripts = cassette.get("chat", {})
        if not isinstance(scripts, dict):
            raise CassetteSchemaError("'chat' must be an object keyed by role")
        for role, script in scripts.items():
            _check_script(role, script)
        self._scripts = copy.deepcopy(scripts)
        self._faults = _parse_faults(cassette)
        self._calls: dict[str, int] = {}
        self._cursors: dict[tuple, int] = {}
        self._lock = threading.Lock()
        self.requests: list[dict] = []

    @classmethod
    def from_file(cls, path: Path) -> "MockProvider":
        with open(path, encoding="utf-8") as handle:
            try:
                document = json.load(handle)
            except json.JSONDecodeError as exc:
                raise CassetteSchemaError(f"cassette {path} is not valid JSON: {exc}") from exc
        return cls(document)

    def chat(self, payload: dict, meta: Optional[dict] = None) -> Any:
        meta = meta or {}
        role = meta.get("role", "")
        session = meta.get("session")
        with self._lock:
            call_index = self._calls.get(role, 0)
            self._calls[role] = call_index + 1
            self.requests.append(
                {"role": role, "session": session, "payload": copy.deepcopy(payload)}
            )
            fault = self._faults.get(role, {}).get(call_index)
            if fault is None:
                text = self._next_entry(role, session)
        if fault is not None:
            return self._raise_fault(role, fault)
        return {"choices": [{"message": {"content": text}}]}

    def _next_entry(self, role: str, session: Optional[str]) -> str:
        script = self._scripts.get(role)
        if script is None:
            raise CassetteSchemaError(f"cassette has no chat script for role {role!r}")
        if isinstance(script, dict):
            if session not in script:
                raise CassetteSchemaError(f"role {role!r}: no script for session {session!r}")
            entries = script[session]
        else:
            entries = script
        key = (role, session if isinstance(script, dict) else None)
        cursor = self._cursors.get(key, 0)
        if cursor >= len(entries):
            raise ScriptExhausted(role, key[1], len(entries))
        self._cursors[key] = cursor + 1
        return entries[cursor]

    def _raise_fault(self, role: str, fault: Fault) -> Any:
        if fault.kind in ("timeout", "connection"):
            raise TransientError(fault.kind, f"injected for role {role!r}")
        if fault.kind == "429":
            raise TransientError("http_429", f"injected for role {role!r}")
        if fault.kind == "5xx":
            raise TransientError("http_500", f"injected for role {role!r}")
        if fault.kind == "4xx":
            raise ProviderRejected(400, f"injected for role {role!r}")
        # malformed: a body the gateway cannot extract a message from
        return {"error": "injected malformed body"}

    def unconsumed(self) -> dict:
        """Scripted replies never requested, keyed by role (and session)."""
        leftovers: dict[str, int] = {}
        for role, script in self._scripts.items():
            if isinstance(script, dict):
                for session, entries in script.items():
                    used = self._cursors.get((role, session), 0)
                    if used < len(entries):
                        leftovers[f"{role}/{session}"] = len(entries) - used
            else:
                used = self._cursors.get((role, None), 0)
                if used < len(script):
                    leftovers[role] = len(script) - used
        return leftovers
