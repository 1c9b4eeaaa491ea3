"""HTTP service for the human review step.

Serves pending subset proposals, records reviewer decisions into the
workspace journal, and returns a pruned-graph preview with each decision.
The service only records decisions; pruned artifacts are produced later by
prune-apply. Static UI assets, when built, are served from the configured
directory at the site root.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .pruning import (
    STATUS_APPROVED,
    AlreadyDecidedError,
    DecisionJournal,
    ReviewDecision,
    SubsetProposal,
    utc_now,
    apply_decision,
)
from .scenarios import ScenarioSet
from .sgl import parse_sgl, serialize_sgl
from .workspace import Workspace, read_json

FALLBACK_PAGE = """<!doctype html>
<html><head><title>review service</title></head>
<body>
<h1>Review service</h1>
<p>No UI bundle is configured. The JSON API is available under <code>/api</code>:</p>
<ul>
<li>GET /api/queue</li>
<li>GET /api/items/{scan_id}/{scenario_index}</li>
<li>POST /api/items/{scan_id}/{scenario_index}/decision</li>
<li>GET /healthz</li>
</ul>
</body></html>
"""


class DecisionBody(BaseModel):
    kept_ids: list[int]
    reviewer: str = Field(min_length=1)
    amend: bool = False
    idempotency_key: Optional[str] = None


class ReviewState:
    """Workspace access plus per-process idempotency replay cache."""

    def __init__(self, workspace: Workspace):
        self.workspace = workspace
        self.journal = DecisionJournal(workspace.decisions_path)
        self._lock = threading.Lock()
        self._replays: dict = {}

    def catalog_graphs(self) -> dict:
        try:
            doc = read_json(self.workspace.catalog_path)
        except FileNotFoundError:
            return {}
        return {record["scan_id"]: record["sgl"] for record in doc["records"]}

    def items(self) -> list:
        """Every proposal with its decision status, in stable order."""
        rows = []
        for scan_id in sorted(self.catalog_graphs()):
            proposals_path = self.workspace.proposals_path(scan_id)
            if not proposals_path.exists():
                continue
            scenario_set = ScenarioSet.from_doc(read_json(self.workspace.scenarios_path(scan_id)))
            selected = scenario_set.selected_scenarios()
            for doc in read_json(proposals_path):
                proposal = SubsetProposal.from_doc(doc)
                decided = self.journal.get(proposal.scan_id, proposal.scenario_index) is not None
                rows.append((proposal, selected[proposal.scenario_index], decided))
        return rows

    def find_item(self, scan_id: str, scenario_index: int):
        for proposal, scenario, decided in self.items():
            if proposal.scan_id == scan_id and proposal.scenario_index == scenario_index:
                return proposal, scenario, decided
        return None

    def record(self, decision: ReviewDecision, amend: bool) -> None:
        self.journal.record(decision, amend=amend)

    def replay_for(self, key: tuple) -> Optional[dict]:
        with self._lock:
            return self._replays.get(key)

    def remember(self, key: tuple, response: dict) -> None:
        with self._lock:
            self._replays[key] = response


def create_app(
    workspace: Workspace,
    token: Optional[str] = None,
    ui_dir: Optional[Path] = None,
) -> FastAPI:
    app = FastAPI(title="sadforge review service")
    state = ReviewState(workspace)
    app.state.review = state

    def check_auth(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/api/queue", dependencies=[Depends(check_auth)])
    def queue(offset: int = 0, limit: int = 20) -> dict:
        if offset < 0 or limit < 1:
            raise HTTPException(status_code=422, detail="offset must be >= 0 and limit >= 1")
        pending = [
            {
                "scan_id": proposal.scan_id,
                "scenario_index": proposal.scenario_index,
                "description": scenario.description,
                "proposed_count": len(proposal.proposed_ids),
                "source": proposal.source,
            }
            for proposal, scenario, decided in state.items()
            if not decided
        ]
        return {
            "total": len(pending),
            "offset": offset,
            "limit": limit,
            "items": pending[offset : offset + limit],
        }

    @app.get("/api/items/{scan_id}/{scenario_index}", dependencies=[Depends(check_auth)])
    def item(scan_id: str, scenario_index: int) -> dict:
        found = state.find_item(scan_id, scenario_index)
        if found is None:
            raise HTTPException(status_code=404, detail="unknown review item")
        proposal, scenario, decided = found
        full_sgl = state.catalog_graphs()[scan_id]
        graph = parse_sgl(full_sgl)
        degree = graph.relation_degree()
        return {
            "scan_id": scan_id,
            "scenario_index": scenario_index,
            "description": scenario.description,
            "full_sgl": full_sgl,
            "objects": [
                {
                    "id": node.id,
                    "label": node.label,
                    "attributes": list(node.attributes),
                    "relation_count": degree.get(node.id, 0),
                    "proposed": node.id in proposal.proposed_ids,
                }
                for node in graph.objects
            ],
            "relations": [
                {
                    "id": rel.id,
                    "subject_id": rel.subject_id,
                    "predicate": rel.predicate,
                    "object_id": rel.object_id,
                }
                for rel in graph.relations
            ],
            "proposal": proposal.to_doc(),
            "decided": decided,
        }

    @app.post("/api/items/{scan_id}/{scenario_index}/decision", dependencies=[Depends(check_auth)])
    def decide(scan_id: str, scenario_index: int, body: DecisionBody) -> dict:
        found = state.find_item(scan_id, scenario_index)
        if found is None:
            raise HTTPException(status_code=404, detail="unknown review item")
        proposal, _, decided = found
        if body.idempotency_key:
            replay = state.replay_for((scan_id, scenario_index, body.idempotency_key))
            if replay is not None:
                return replay
        kept = set(body.kept_ids)
        if not kept:
            raise HTTPException(status_code=422, detail="kept_ids must not be empty")
        graph = parse_sgl(state.catalog_graphs()[scan_id])
        unknown = kept - set(graph.object_ids())
        if unknown:
            raise HTTPException(status_code=422, detail=f"unknown object ids: {sorted(unknown)}")
        if decided and not body.amend:
            raise HTTPException(status_code=409, detail="already decided; resubmit with amend=true")
        decision = ReviewDecision(
            scan_id=scan_id,
            scenario_index=scenario_index,
            kept_ids=frozenset(kept),
            reviewer=body.reviewer,
            decided_at=utc_now(),
            status=STATUS_APPROVED,
        )
        try:
            state.record(decision, amend=body.amend)
        except AlreadyDecidedError:
            raise HTTPException(status_code=409, detail="already decided; resubmit with amend=true")
        response = {
            "decision": decision.to_doc(),
            "pruned_sgl": serialize_sgl(apply_decision(graph, decision)),
        }
        if body.idempotency_key:
            state.remember((scan_id, scenario_index, body.idempotency_key), response)
        return response

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index() -> str:
            return FALLBACK_PAGE

    return app
