"""Load source catalogs of per-scan objects and relationships into scene graphs.

The neutral input schema (one JSON document per side) keeps fixtures small;
3DSSG-style dumps map onto it directly:

    objects_source   = {"scans": [{"scan": <id>, "objects":
                        [{"id": <int>, "label": <str>, "attributes": [<str>...]}...]}...]}
    relations_source = {"scans": [{"scan": <id>, "relationships":
                        [[<subject_id>, <object_id>, <relation_id>, <predicate>]...]}...]}

Noisy edges (dangling endpoints, self-loops, reused relation ids) are dropped
and counted rather than aborting the load; malformed objects are fatal.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .sgl import ObjectNode, Relation, SceneGraph, TokenError

logger = logging.getLogger(__name__)


class CatalogError(ValueError):
    """Base class for catalog loading failures."""


class SchemaError(CatalogError):
    """Input document does not match the source catalog schema."""


class DuplicateScanIdError(CatalogError):
    def __init__(self, scan_id: str):
        super().__init__(f"scan {scan_id!r} appears more than once")
        self.scan_id = scan_id


class DuplicateObjectIdError(CatalogError):
    def __init__(self, scan_id: str, object_id: int):
        super().__init__(f"scan {scan_id!r} declares object id {object_id} twice")
        self.scan_id = scan_id
        self.object_id = object_id


@dataclass
class ScanRecord:
    """One scan: an opaque id, its scene graph, and load metadata."""

    scan_id: str
    graph: SceneGraph
    source_meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CatalogStats:
    scan_count: int
    distinct_object_classes: int
    distinct_attributes: int
    distinct_relation_predicates: int


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise SchemaError(message)


def _scan_entries(document: Any, side: str) -> list:
    _expect(isinstance(document, dict), f"{side}: top level must be an object")
    scans = document.get("scans")
    _expect(isinstance(scans, list), f"{side}: missing 'scans' array")
    return scans


def load_catalog(objects_source: Any, relations_source: Any) -> list[ScanRecord]:
    """Combine the two source documents into one validated ScanRecord per scan.

    Output is sorted by scan id so a given input always yields the same list.
    Relations whose endpoints are missing from their scan are dropped with a
    warning; drop counts land in ``source_meta``.
    """
    objects_by_scan: dict[str, list[ObjectNode]] = {}
    for entry in _scan_entries(objects_source, "objects_source"):
        _expect(isinstance(entry, dict), "objects_source: scan entry must be an object")
        scan_id = entry.get("scan")
        _expect(isinstance(scan_id, str) and scan_id != "", "objects_source: scan id must be a non-empty string")
        if scan_id in objects_by_scan:
            raise DuplicateScanIdError(scan_id)
        raw_objects = entry.get("objects")
        _expect(isinstance(raw_objects, list), f"scan {scan_id!r}: missing 'objects' array")
        nodes: list[ObjectNode] = []
        seen_ids: set[int] = set()
        for raw in raw_objects:
            _expect(isinstance(raw, dict), f"scan {scan_id!r}: object entry must be an object")
            obj_id = raw.get("id")
            label = raw.get("label")
            attributes = raw.get("attributes", [])
            _expect(isinstance(obj_id, int) and not isinstance(obj_id, bool) and obj_id >= 0,
                    f"scan {scan_id!r}: object id must be a non-negative integer")
            _expect(isinstance(label, str), f"scan {scan_id!r}: object label must be a string")
            _expect(isinstance(attributes, list) and all(isinstance(a, str) for a in attributes),
                    f"scan {scan_id!r}: attributes must be an array of strings")
            if obj_id in seen_ids:
                raise DuplicateObjectIdError(scan_id, obj_id)
            seen_ids.add(obj_id)
            try:
                nodes.append(ObjectNode.normalized(label, obj_id, attributes))
            except TokenError as exc:
                raise SchemaError(f"scan {scan_id!r} object {obj_id}: {exc}") from exc
        objects_by_scan[scan_id] = nodes

    relations_by_scan: dict[str, list] = {}
    for entry in _scan_entries(relations_source, "relations_source"):
        _expect(isinstance(entry, dict), "relations_source: scan entry must be an object")
        scan_id = entry.get("scan")
        _expect(isinstance(scan_id, str) and scan_id != "", "relations_source: scan id must be a non-empty string")
        if scan_id not in objects_by_scan:
            raise SchemaError(f"relations_source names unknown scan {scan_id!r}")
        if scan_id in relations_by_scan:
            raise DuplicateScanIdError(scan_id)
        rels = entry.get("relationships")
        _expect(isinstance(rels, list), f"scan {scan_id!r}: missing 'relationships' array")
        relations_by_scan[scan_id] = rels

    records = []
    for scan_id in sorted(objects_by_scan):
        nodes = objects_by_scan[scan_id]
        by_id = {n.id: n for n in nodes}
        kept: list[Relation] = []
        seen_rel_ids: set[int] = set()
        dropped_dangling = dropped_self = dropped_duplicate = 0
        raw_relations = relations_by_scan.get(scan_id, [])
        for raw in raw_relations:
            _expect(
                isinstance(raw, list) and len(raw) == 4,
                f"scan {scan_id!r}: relationship must be [subject_id, object_id, relation_id, predicate]",
            )
            subj_id, obj_id, rel_id, predicate = raw
            _expect(all(isinstance(v, int) and not isinstance(v, bool) for v in (subj_id, obj_id, rel_id)),
                    f"scan {scan_id!r}: relationship ids must be integers")
            _expect(isinstance(predicate, str), f"scan {scan_id!r}: predicate must be a string")
            if subj_id not in by_id or obj_id not in by_id:
                dropped_dangling += 1
                logger.warning(
                    "scan %s: dropping relation %s (%s->%s): endpoint not in scan",
                    scan_id, rel_id, subj_id, obj_id,
                )
                continue
            if subj_id == obj_id:
                dropped_self += 1
                logger.warning("scan %s: dropping self-relation %s on object %s", scan_id, rel_id, subj_id)
                continue
            if rel_id in seen_rel_ids:
                dropped_duplicate += 1
                logger.warning("scan %s: dropping relation with reused id %s", scan_id, rel_id)
                continue
            seen_rel_ids.add(rel_id)
            try:
                kept.append(
                    Relation.normalized(rel_id, by_id[subj_id].label, subj_id, predicate, by_id[obj_id].label, obj_id)
                )
            except TokenError as exc:
                raise SchemaError(f"scan {scan_id!r} relation {rel_id}: {exc}") from exc
        graph = SceneGraph.build(nodes, kept)
        records.append(
            ScanRecord(
                scan_id=scan_id,
                graph=graph,
                source_meta={
                    "relations_total": len(raw_relations),
                    "relations_kept": len(kept),
                    "relations_dropped_dangling": dropped_dangling,
                    "relations_dropped_self": dropped_self,
                    "relations_dropped_duplicate_id": dropped_duplicate,
                },
            )
        )
    return records


def load_catalog_files(objects_path: Path, relations_path: Path) -> list[ScanRecord]:
    with open(objects_path, encoding="utf-8") as handle:
        objects_source = json.load(handle)
    with open(relations_path, encoding="utf-8") as handle:
        relations_source = json.load(handle)
    records = load_catalog(objects_source, relations_source)
    for record in records:
        record.source_meta["objects_path"] = str(objects_path)
        record.source_meta["relations_path"] = str(relations_path)
    return records


def catalog_stats(records: list[ScanRecord]) -> CatalogStats:
    """Distinct-token counts over the whole catalog."""
    labels: set[str] = set()
    attributes: set[str] = set()
    predicates: set[str] = set()
    for record in records:
        for obj in record.graph.objects:
            labels.add(obj.label)
            attributes.update(obj.attributes)
        for rel in record.graph.relations:
            predicates.add(rel.predicate)
    return CatalogStats(
        scan_count=len(records),
        distinct_object_classes=len(labels),
        distinct_attributes=len(attributes),
        distinct_relation_predicates=len(predicates),
    )
