/**
 * Typed client for the review API.
 *
 * The fetch implementation is injectable so tests can script responses and
 * capture exact request bytes. Decision POSTs always carry an idempotency
 * key; callers that retry a failed submit must pass the same key again so
 * the server can replay instead of double-recording.
 */

import type { DecisionRequest, DecisionResponse, ItemDetail, QueueResponse } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

export function newIdempotencyKey(): string {
  if (typeof crypto !== "undefined" && typeof crypto.randomUUID === "function") {
    return crypto.randomUUID();
  }
  return `key-${Date.now()}-${Math.random().toString(36).slice(2, 10)}`;
}

export interface ApiClientOptions {
  baseUrl?: string;
  token?: string;
  fetchFn?: FetchLike;
}

export interface DecisionDraft {
  keptIds: Iterable<number>;
  reviewer: string;
  amend?: boolean;
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly token?: string;
  private readonly fetchFn: FetchLike;

  constructor(options: ApiClientOptions = {}) {
    this.baseUrl = (options.baseUrl ?? "").replace(/\/$/, "");
    this.token = options.token;
    this.fetchFn = options.fetchFn ?? ((url, init) => fetch(url, init));
  }

  async queue(offset = 0, limit = 20): Promise<QueueResponse> {
    return this.request<QueueResponse>(`/api/queue?offset=${offset}&limit=${limit}`);
  }

  async item(scanId: string, scenarioIndex: number): Promise<ItemDetail> {
    return this.request<ItemDetail>(
      `/api/items/${encodeURIComponent(scanId)}/${scenarioIndex}`,
    );
  }

  /**
   * Submit a decision. `idempotencyKey` defaults to a fresh key; reuse the
   * returned request's key when retrying after a network failure.
   */
  async decide(
    scanId: string,
    scenarioIndex: number,
    draft: DecisionDraft,
    idempotencyKey: string = newIdempotencyKey(),
  ): Promise<DecisionResponse> {
    const body: DecisionRequest = {
      kept_ids: [...draft.keptIds].sort((a, b) => a - b),
      reviewer: draft.reviewer,
      amend: draft.amend ?? false,
      idempotency_key: idempotencyKey,
    };
    return this.request<DecisionResponse>(
      `/api/items/${encodeURIComponent(scanId)}/${scenarioIndex}/decision`,
      { method: "POST", body: JSON.stringify(body) },
    );
  }

  async health(): Promise<boolean> {
    try {
      await this.request<{ status: string }>("/healthz");
      return true;
    } catch {
      return false;
    }
  }

  private async request<T>(path: string, init: RequestInit = {}): Promise<T> {
    const headers: Record<string, string> = {
      "Content-Type": "application/json",
      ...((init.headers as Record<string, string>) ?? {}),
    };
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    const response = await this.fetchFn(`${this.baseUrl}${path}`, { ...init, headers });
    if (!response.ok) {
      throw new ApiError(response.status, await readDetail(response));
    }
    return (await response.json()) as T;
  }
}

async function readDetail(response: Response): Promise<string> {
  try {
    const body: unknown = await response.json();
    if (body && typeof body === "object" && "detail" in body) {
      const detail = (body as { detail: unknown }).detail;
      return typeof detail === "string" ? detail : JSON.stringify(detail);
    }
  } catch {
    // fall through to the status text
  }
  return response.statusText || "request failed";
}
