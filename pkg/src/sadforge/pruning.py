"""Scenario-specific subset proposals, review decisions, and graph pruning.

The model proposes which objects matter for a scenario; a reviewer (human or
the auto mode) fixes the kept set; apply_decision materializes the pruned
graph. Proposals always contain the scenario's own objects, so review can
only ever widen from that seed, never lose it.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from .gateway import AgentConfig, Gateway, GatewayError
from .jsontools import first_json_object
from .scenarios import Scenario, parse_object_ref
from .sgl import SceneGraph, prune, serialize_sgl

logger = logging.getLogger(__name__)

SOURCE_LLM = "llm"
SOURCE_SEED_ONLY = "seed-only"

STATUS_APPROVED = "approved"
STATUS_AUTO = "auto_approved"

REVIEW_MODES = ("auto", "cli", "web")


class PruningError(ValueError):
    pass


class EmptySubsetError(PruningError):
    """A decision kept no objects; a scenario needs at least one."""


class ModeError(PruningError):
    """Operation not allowed under the configured review mode."""


class AlreadyDecidedError(PruningError):
    def __init__(self, scan_id: str, scenario_index: int):
        super().__init__(
            f"({scan_id}, {scenario_index}) already has a decision; pass amend to replace it"
        )
        self.scan_id = scan_id
        self.scenario_index = scenario_index


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class SubsetProposal:
    scan_id: str
    scenario_index: int
    proposed_ids: frozenset
    source: str
    rationale: Optional[dict] = None

    def __post_init__(self):
        if self.source not in (SOURCE_LLM, SOURCE_SEED_ONLY):
            raise ValueError(f"unknown proposal source {self.source!r}")
        if not self.proposed_ids:
            raise ValueError("proposal must contain at least one object id")

    def to_doc(self) -> dict:
        return {
            "scan_id": self.scan_id,
            "scenario_index": self.scenario_index,
            "proposed_ids": sorted(self.proposed_ids),
            "source": self.source,
            "rationale": self.rationale,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SubsetProposal":
        return cls(
            scan_id=doc["scan_id"],
            scenario_index=doc["scenario_index"],
            proposed_ids=frozenset(doc["proposed_ids"]),
            source=doc["source"],
            rationale=doc.get("rationale"),
        )


@dataclass(frozen=True)
class ReviewDecision:
    scan_id: str
    scenario_index: int
    kept_ids: frozenset
    reviewer: str
    decided_at: str
    status: str

    def __post_init__(self):
        if not self.kept_ids:
            raise EmptySubsetError("kept_ids must be non-empty")
        if self.status not in (STATUS_APPROVED, STATUS_AUTO):
            raise ValueError(f"unknown decision status {self.status!r}")
        if not self.reviewer:
            raise ValueError("reviewer must be non-empty")

    def to_doc(self) -> dict:
        return {
            "scan_id": self.scan_id,
            "scenario_index": self.scenario_index,
            "kept_ids": sorted(self.kept_ids),
            "reviewer": self.reviewer,
            "decided_at": self.decided_at,
            "status": self.status,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ReviewDecision":
        return cls(
            scan_id=doc["scan_id"],
            scenario_index=doc["scenario_index"],
            kept_ids=frozenset(doc["kept_ids"]),
            reviewer=doc["reviewer"],
            decided_at=doc["decided_at"],
            status=doc["status"],
        )


def _parse_proposal_reply(text: str, graph: SceneGraph) -> Optional[tuple]:
    """(ids, rationale) from a pruner reply, or None when unusable."""
    document = first_json_object(text)
    if document is None:
        return None
    objects = document.get("objects")
    if not isinstance(objects, list):
        return None
    ids = set()
    for ref in objects:
        obj_id = parse_object_ref(ref, graph)
        if obj_id is None:
            logger.warning("proposal reply names unknown object %r; dropped", ref)
        else:
            ids.add(obj_id)
    rationale = None
    reasons = document.get("reasons")
    if isinstance(reasons, dict):
        rationale = {}
        for ref, reason in reasons.items():
            obj_id = parse_object_ref(ref, graph)
            if obj_id is not None and isinstance(reason, str) and reason:
                rationale[obj_id] = reason
        rationale = rationale or None
    return ids, rationale


def propose_subset(
    scan_id: str,
    scenario_index: int,
    graph: SceneGraph,
    scenario: Scenario,
    gateway: Gateway,
    config: AgentConfig,
    fallback: bool = True,
    session: Optional[str] = None,
) -> SubsetProposal:
    """Ask the model which objects matter; union with the scenario's own.

    With fallback enabled any gateway or parse failure degrades to a
    seed-only proposal instead of failing the stage.
    """
    seed_ids = set(scenario.involved_object_ids)
    request = (
        f"Scene graph: {serialize_sgl(graph)}\n\n"
        f"Scenario: {scenario.description}\n\n"
        "Which objects from the scene graph are relevant to this scenario?"
    )
    try:
        reply = gateway.chat(config, [{"role": "user", "content": request}], session=session)
        parsed = _parse_proposal_reply(reply, graph)
    except GatewayError:
        if not fallback:
            raise
        logger.warning("(%s, %d): proposal call failed; falling back to scenario seed", scan_id, scenario_index)
        parsed = None
    if parsed is None:
        return SubsetProposal(
            scan_id=scan_id,
            scenario_index=scenario_index,
            proposed_ids=frozenset(seed_ids),
            source=SOURCE_SEED_ONLY,
        )
    llm_ids, rationale = parsed
    return SubsetProposal(
        scan_id=scan_id,
        scenario_index=scenario_index,
        proposed_ids=frozenset(seed_ids | llm_ids),
        source=SOURCE_LLM,
        rationale=rationale,
    )


def apply_decision(graph: SceneGraph, decision: ReviewDecision) -> SceneGraph:
    """Pruned graph for a decision; kept ids must exist in the graph."""
    if not decision.kept_ids:
        raise EmptySubsetError("decision kept no objects")
    return prune(graph, decision.kept_ids)


def auto_approve(
    proposal: SubsetProposal,
    review_mode: str,
    now_fn: Callable[[], str] = utc_now,
) -> ReviewDecision:
    """Turn a proposal into a decision verbatim; only legal in auto mode."""
    if review_mode != "auto":
        raise ModeError(f"auto_approve requires review mode 'auto', not {review_mode!r}")
    return ReviewDecision(
        scan_id=proposal.scan_id,
        scenario_index=proposal.scenario_index,
        kept_ids=proposal.proposed_ids,
        reviewer="auto",
        decided_at=now_fn(),
        status=STATUS_AUTO,
    )


class DecisionJournal:
    """Append-only decisions.jsonl; one decision per (scan, scenario) key.

    Amendments append a new line; readers take the last line per key. Writes
    are serialized so the review service and CLI never interleave lines.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> dict:
        decisions: dict[tuple, ReviewDecision] = {}
        if not self.path.exists():
            return decisions
        with open(self.path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                decision = ReviewDecision.from_doc(json.loads(line))
                decisions[(decision.scan_id, decision.scenario_index)] = decision
        return decisions

    def get(self, scan_id: str, scenario_index: int) -> Optional[ReviewDecision]:
        return self.load().get((scan_id, scenario_index))

    def record(self, decision: ReviewDecision, amend: bool = False) -> None:
        with self._lock:
            existing = self.load()
            key = (decision.scan_id, decision.scenario_index)
            if key in existing and not amend:
                raise AlreadyDecidedError(*key)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(decision.to_doc(), ensure_ascii=False, sort_keys=True) + "\n")
