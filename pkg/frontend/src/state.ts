/**
 * Draft state for one review item: which objects the reviewer keeps.
 *
 * The draft starts from the server's proposal and changes only through
 * toggles, so the submitted kept set always equals the visible checked
 * set. An empty draft can never be submitted.
 */

import { previewPrune, type PrunePreview } from "./sgl.js";
import type { ItemDetail } from "./types.js";

export interface Draft {
  kept: Set<number>;
}

export function draftFromDetail(detail: ItemDetail): Draft {
  const kept = new Set<number>();
  for (const row of detail.objects) {
    if (row.proposed) {
      kept.add(row.id);
    }
  }
  return { kept };
}

export function toggleObject(draft: Draft, objectId: number): Draft {
  const kept = new Set(draft.kept);
  if (kept.has(objectId)) {
    kept.delete(objectId);
  } else {
    kept.add(objectId);
  }
  return { kept };
}

export function canSubmit(draft: Draft): boolean {
  return draft.kept.size > 0;
}

export function draftPreview(detail: ItemDetail, draft: Draft): PrunePreview {
  return previewPrune(
    { objects: detail.objects, relations: detail.relations },
    draft.kept,
  );
}
