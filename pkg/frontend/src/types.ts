/**
 * Wire types for the review API.
 *
 * These mirror the JSON the server actually sends; field names are
 * snake_case because the payloads are, and converting would only create
 * two names for the same thing.
 */

export interface QueueItem {
  scan_id: string;
  scenario_index: number;
  description: string;
  proposed_count: number;
  source: string;
}

export interface QueueResponse {
  total: number;
  offset: number;
  limit: number;
  items: QueueItem[];
}

export interface ObjectRow {
  id: number;
  label: string;
  attributes: string[];
  relation_count: number;
  proposed: boolean;
}

export interface RelationRow {
  id: number;
  subject_id: number;
  predicate: string;
  object_id: number;
}

export interface ProposalDoc {
  scan_id: string;
  scenario_index: number;
  proposed_ids: number[];
  source: string;
  rationale: Record<string, unknown> | null;
}

export interface ItemDetail {
  scan_id: string;
  scenario_index: number;
  description: string;
  full_sgl: string;
  objects: ObjectRow[];
  relations: RelationRow[];
  proposal: ProposalDoc;
  decided: boolean;
}

/** POST body for a decision; key order here is the order on the wire. */
export interface DecisionRequest {
  kept_ids: number[];
  reviewer: string;
  amend: boolean;
  idempotency_key: string;
}

export interface DecisionResponse {
  decision: Record<string, unknown>;
  pruned_sgl: string;
}
