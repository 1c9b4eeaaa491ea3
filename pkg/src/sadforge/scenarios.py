"""Scenario generation and diversity selection.

For each scan the model proposes up to ten scenarios grounded in the scan's
object list; we embed the descriptions and keep the k=5 whose pairwise
cosine similarities sum lowest, found by exhaustive enumeration (n <= 10
keeps that cheap and exact).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .gateway import AgentConfig, Gateway
from .jsontools import first_json_object
from .sgl import SceneGraph, TokenError, normalize_token

logger = logging.getLogger(__name__)

MAX_CANDIDATES = 10
DEFAULT_SELECT_K = 5

SCHEMA_HINT = (
    'Respond with a single JSON object of the form {"scenarios": '
    '[{"description": "<one sentence>", "objects": ["<label>-<id>", ...]}, ...]}. '
    "Do not output anything else."
)
REPROMPT_TEXT = "Respond only with the JSON schema shown."


class ResponseParseError(ValueError):
    """Model reply did not match the scenario response schema after retry."""


class DimensionMismatch(ValueError):
    pass


class ZeroVector(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    description: str
    involved_object_ids: tuple
    origin_index: int

    def __post_init__(self):
        if not self.description:
            raise ValueError("scenario description must be non-empty")
        if not self.involved_object_ids:
            raise ValueError("scenario must involve at least one object")


@dataclass
class ScenarioSet:
    """Candidate scenarios for one scan plus the diversity selection."""

    scan_id: str
    candidates: list
    selected: tuple
    embeddings: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.candidates) > MAX_CANDIDATES:
            raise ValueError(f"at most {MAX_CANDIDATES} candidates allowed")
        if len(set(self.selected)) != len(self.selected):
            raise ValueError("selected indices must be distinct")
        if any(not 0 <= i < len(self.candidates) for i in self.selected):
            raise ValueError("selected index out of range")
        if len(self.selected) > DEFAULT_SELECT_K:
            raise ValueError(f"at most {DEFAULT_SELECT_K} scenarios may be selected")

    def selected_scenarios(self) -> list:
        return [self.candidates[i] for i in self.selected]

    def to_doc(self) -> dict:
        return {
            "scan_id": self.scan_id,
            "candidates": [
                {
                    "description": s.description,
                    "object_ids": list(s.involved_object_ids),
                    "origin_index": s.origin_index,
                }
                for s in self.candidates
            ],
            "selected": list(self.selected),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ScenarioSet":
        candidates = [
            Scenario(
                description=c["description"],
                involved_object_ids=tuple(c["object_ids"]),
                origin_index=c["origin_index"],
            )
            for c in doc["candidates"]
        ]
        return cls(scan_id=doc["scan_id"], candidates=candidates, selected=tuple(doc["selected"]))


def _object_listing(graph: SceneGraph) -> str:
    return ", ".join(f"{obj.label}-{obj.id}" for obj in graph.objects)


def parse_object_ref(ref: str, graph: SceneGraph) -> Optional[int]:
    """Resolve a "<label>-<id>" reference against the graph; None if unknown."""
    if not isinstance(ref, str):
        return None
    label, dash, digits = ref.rpartition("-")
    if not dash or not digits.isdigit() or not label:
        return None
    obj_id = int(digits)
    node = graph.objects_by_id().get(obj_id)
    if node is None:
        return None
    try:
        if normalize_token(label) != node.label:
            return None
    except TokenError:
        return None
    return obj_id


def _parse_scenarios(text: str, graph: SceneGraph) -> Optional[list]:
    """Scenario list from a model reply, or None when the shape is wrong."""
    document = first_json_object(text)
    if document is None:
        return None
    entries = document.get("scenarios")
    if not isinstance(entries, list):
        return None
    scenarios = []
    for position, raw in enumerate(entries):
        if len(scenarios) == MAX_CANDIDATES:
            break
        if not isinstance(raw, dict):
            return None
        description = raw.get("description")
        objects = raw.get("objects")
        if not isinstance(description, str) or not isinstance(objects, list):
            return None
        description = description.strip()
        ids = []
        for ref in objects:
            obj_id = parse_object_ref(ref, graph)
            if obj_id is None:
                logger.warning("dropping unknown object reference %r", ref)
            elif obj_id not in ids:
                ids.append(obj_id)
        if not description or not ids:
            logger.warning("discarding scenario with no usable content: %r", description[:60])
            continue
        scenarios.append(
            Scenario(
                description=description,
                involved_object_ids=tuple(sorted(ids)),
                origin_index=position,
            )
        )
    return scenarios


def generate_scenarios(
    graph: SceneGraph,
    gateway: Gateway,
    config: AgentConfig,
    session: Optional[str] = None,
) -> list:
    """Ask the model for up to ten scenarios grounded in the graph's objects.

    One corrective re-prompt is sent when the reply does not match the
    response schema; a second failure raises ResponseParseError.
    """
    if graph.is_empty():
        raise ValueError("cannot generate scenarios for an empty graph")
    request = f"Objects in the environment: {_object_listing(graph)}\n\n{SCHEMA_HINT}"
    messages = [{"role": "user", "content": request}]
    reply = gateway.chat(config, messages, session=session)
    scenarios = _parse_scenarios(reply, graph)
    if scenarios is None:
        logger.warning("scenario reply did not match schema; re-prompting once")
        messages = messages + [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": REPROMPT_TEXT},
        ]
        reply = gateway.chat(config, messages, session=session)
        scenarios = _parse_scenarios(reply, graph)
        if scenarios is None:
            raise ResponseParseError(f"scenario reply unparseable after re-prompt: {reply[:200]}")
    return scenarios


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"vector shapes differ: {u.shape} vs {v.shape}")
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u == 0.0 or norm_v == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    value = float(np.dot(u, v) / (norm_u * norm_v))
    return max(-1.0, min(1.0, value))


def select_diverse(candidates: Sequence, vectors: Sequence, k: int = DEFAULT_SELECT_K) -> tuple:
    """Indices of the k candidates whose summed pairwise similarity is lowest.

    Exhaustive over C(n, k) subsets; ties go to the lexicographically
    smallest index tuple, which enumeration order provides for free.
    """
    if len(candidates) != len(vectors):
        raise ValueError("one vector per candidate required")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(candidates)
    if n <= k:
        return tuple(range(n))
    similarity = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            similarity[i][j] = cosine_similarity(vectors[i], vectors[j])
    best: Optional[tuple] = None
    best_score = float("inf")
    for subset in combinations(range(n), k):
        score = sum(similarity[i][j] for i, j in combinations(subset, 2))
        if score < best_score:
            best = subset
            best_score = score
    assert best is not None
    return best


def build_scenario_set(
    scan_id: str,
    graph: SceneGraph,
    gateway: Gateway,
    config: AgentConfig,
    k: int = DEFAULT_SELECT_K,
    session: Optional[str] = None,
) -> ScenarioSet:
    """Generate, embed, and select in one step; the per-scan pipeline unit."""
    candidates = generate_scenarios(graph, gateway, config, session=session)
    if not candidates:
        return ScenarioSet(scan_id=scan_id, candidates=[], selected=())
    vectors = gateway.embed([s.description for s in candidates], session=session)
    selected = select_diverse(candidates, vectors, k=k)
    return ScenarioSet(scan_id=scan_id, candidates=candidates, selected=selected, embeddings=vectors)
