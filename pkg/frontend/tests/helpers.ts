/**
 * Test doubles: a scripted fetch for exact-bytes assertions and a small
 * in-memory review API that mimics the server's queue/detail/decision
 * semantics, including 409 on double-decide and idempotency replay.
 */

import type { FetchLike } from "../src/api.js";
import type { DecisionRequest, ItemDetail, QueueItem } from "../src/types.js";

export interface RecordedRequest {
  url: string;
  method: string;
  headers: Record<string, string>;
  body?: string;
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

type Step = Response | Error;

/** Replays `steps` in order; an Error step rejects like a dropped socket. */
export function scriptedFetch(steps: Step[]): { fetchFn: FetchLike; requests: RecordedRequest[] } {
  const queue = [...steps];
  const requests: RecordedRequest[] = [];
  const fetchFn: FetchLike = (url, init) => {
    requests.push({
      url,
      method: init?.method ?? "GET",
      headers: { ...((init?.headers as Record<string, string>) ?? {}) },
      body: typeof init?.body === "string" ? init.body : undefined,
    });
    const step = queue.shift();
    if (step === undefined) {
      throw new Error(`unexpected request #${requests.length}: ${url}`);
    }
    if (step instanceof Error) {
      return Promise.reject(step);
    }
    return Promise.resolve(step);
  };
  return { fetchFn, requests };
}

export function makeDetail(overrides: Partial<ItemDetail> = {}): ItemDetail {
  const base: ItemDetail = {
    scan_id: "scan-a",
    scenario_index: 0,
    description: "Boiling water for tea.",
    full_sgl:
      "obj-kettle-1:[metal]; obj-counter-2:[]; obj-cup-3:[white]; obj-plant-4:[]; " +
      "rel-1:(kettle-1,on_top_of,counter-2); rel-2:(cup-3,next_to,kettle-1); " +
      "rel-3:(plant-4,behind,cup-3);",
    objects: [
      { id: 1, label: "kettle", attributes: ["metal"], relation_count: 2, proposed: true },
      { id: 2, label: "counter", attributes: [], relation_count: 1, proposed: true },
      { id: 3, label: "cup", attributes: ["white"], relation_count: 2, proposed: true },
      { id: 4, label: "plant", attributes: [], relation_count: 1, proposed: false },
    ],
    relations: [
      { id: 1, subject_id: 1, predicate: "on_top_of", object_id: 2 },
      { id: 2, subject_id: 3, predicate: "next_to", object_id: 1 },
      { id: 3, subject_id: 4, predicate: "behind", object_id: 3 },
    ],
    proposal: {
      scan_id: "scan-a",
      scenario_index: 0,
      proposed_ids: [1, 2, 3],
      source: "llm",
      rationale: null,
    },
    decided: false,
  };
  return { ...base, ...overrides };
}

export function queueItemOf(detail: ItemDetail): QueueItem {
  return {
    scan_id: detail.scan_id,
    scenario_index: detail.scenario_index,
    description: detail.description,
    proposed_count: detail.proposal.proposed_ids.length,
    source: detail.proposal.source,
  };
}

interface JournalEntry {
  body: DecisionRequest;
  amend: boolean;
}

/**
 * Stateful double of the review service. Routes the same paths the real
 * server exposes and reproduces its decision semantics: 422 on empty kept
 * sets, 409 on deciding twice without amend, and replay when the same
 * idempotency key is seen again.
 */
export class FakeReviewApi {
  journal: JournalEntry[] = [];
  requests: RecordedRequest[] = [];
  failNextPost = false;
  private readonly replays = new Map<string, Response>();

  constructor(private items: ItemDetail[]) {}

  private pending(): ItemDetail[] {
    return this.items.filter((item) => !item.decided);
  }

  private find(scanId: string, index: number): ItemDetail | undefined {
    return this.items.find((i) => i.scan_id === scanId && i.scenario_index === index);
  }

  readonly fetchFn: FetchLike = (url, init) => {
    this.requests.push({
      url,
      method: init?.method ?? "GET",
      headers: { ...((init?.headers as Record<string, string>) ?? {}) },
      body: typeof init?.body === "string" ? init.body : undefined,
    });
    return Promise.resolve(this.route(url, init));
  };

  private route(url: string, init?: RequestInit): Response {
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    if (path.startsWith("/api/queue")) {
      const items = this.pending().map(queueItemOf);
      return jsonResponse(200, { total: items.length, offset: 0, limit: 100, items });
    }
    const decision = path.match(/^\/api\/items\/([^/]+)\/(\d+)\/decision$/);
    if (decision && init?.method === "POST") {
      return this.decide(decision[1], Number(decision[2]), String(init.body));
    }
    const detail = path.match(/^\/api\/items\/([^/]+)\/(\d+)$/);
    if (detail) {
      const item = this.find(detail[1], Number(detail[2]));
      return item ? jsonResponse(200, item) : jsonResponse(404, { detail: "unknown review item" });
    }
    return jsonResponse(404, { detail: `no route for ${path}` });
  }

  private decide(scanId: string, index: number, rawBody: string): Response {
    if (this.failNextPost) {
      this.failNextPost = false;
      throw new TypeError("fetch failed");
    }
    const item = this.find(scanId, index);
    if (!item) {
      return jsonResponse(404, { detail: "unknown review item" });
    }
    const body = JSON.parse(rawBody) as DecisionRequest;
    const replayKey = `${scanId}/${index}/${body.idempotency_key}`;
    const cached = this.replays.get(replayKey);
    if (cached) {
      return cached.clone();
    }
    if (body.kept_ids.length === 0) {
      return jsonResponse(422, { detail: "kept_ids must not be empty" });
    }
    if (item.decided && !body.amend) {
      return jsonResponse(409, { detail: "already decided; resubmit with amend=true" });
    }
    this.journal.push({ body, amend: body.amend });
    item.decided = true;
    const response = jsonResponse(200, {
      decision: { scan_id: scanId, scenario_index: index, kept_ids: body.kept_ids },
      pruned_sgl: "",
    });
    this.replays.set(replayKey, response.clone());
    return response;
  }
}
