/**
 * Browser-side scene-graph pruning and serialization.
 *
 * The preview shown while toggling checkboxes must stay behavior-identical
 * to the server's pruner: keep exactly the checked objects, keep a relation
 * only when both endpoints stay, render objects then relations sorted by id
 * with single spaces between statements. Contract fixtures recorded from
 * the server pin this down (see tests/sgl.test.ts).
 */

import type { ObjectRow, RelationRow } from "./types.js";

export interface GraphView {
  objects: ObjectRow[];
  relations: RelationRow[];
}

export interface PrunePreview {
  kept: GraphView;
  droppedRelationIds: number[];
  sgl: string;
}

function labelIndex(objects: ObjectRow[]): Map<number, string> {
  const byId = new Map<number, string>();
  for (const row of objects) {
    byId.set(row.id, row.label);
  }
  return byId;
}

/** Restrict the graph to `keptIds`; relations need both endpoints kept. */
export function pruneGraph(graph: GraphView, keptIds: Set<number>): GraphView {
  const objects = graph.objects.filter((row) => keptIds.has(row.id));
  const relations = graph.relations.filter(
    (rel) => keptIds.has(rel.subject_id) && keptIds.has(rel.object_id),
  );
  return { objects, relations };
}

/** Canonical SGL text: objects sorted by id, then relations sorted by id. */
export function serializeSgl(graph: GraphView): string {
  const labels = labelIndex(graph.objects);
  const parts: string[] = [];
  const objects = [...graph.objects].sort((a, b) => a.id - b.id);
  for (const row of objects) {
    parts.push(`obj-${row.label}-${row.id}:[${row.attributes.join(",")}];`);
  }
  const relations = [...graph.relations].sort((a, b) => a.id - b.id);
  for (const rel of relations) {
    const subject = labels.get(rel.subject_id);
    const object = labels.get(rel.object_id);
    if (subject === undefined || object === undefined) {
      throw new Error(`relation ${rel.id} references an object missing from the view`);
    }
    parts.push(
      `rel-${rel.id}:(${subject}-${rel.subject_id},${rel.predicate},${object}-${rel.object_id});`,
    );
  }
  return parts.join(" ");
}

/** Prune and serialize in one step, reporting which relations fell away. */
export function previewPrune(graph: GraphView, keptIds: Set<number>): PrunePreview {
  const kept = pruneGraph(graph, keptIds);
  const keptRelationIds = new Set(kept.relations.map((rel) => rel.id));
  const droppedRelationIds = graph.relations
    .filter((rel) => !keptRelationIds.has(rel.id))
    .map((rel) => rel.id);
  return { kept, droppedRelationIds, sgl: serializeSgl(kept) };
}
