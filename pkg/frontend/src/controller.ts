/**
 * Screen flow and submit lifecycle.
 *
 * The controller owns the idempotency key for an in-flight decision: a key
 * is minted when a submit episode starts and reused verbatim for retries
 * after network failures, so the server can replay the first successful
 * recording instead of writing a duplicate. A fresh episode (new submit or
 * an amend after 409) gets a fresh key.
 */

import { ApiClient, ApiError, newIdempotencyKey } from "./api.js";
import type { Draft } from "./state.js";
import { canSubmit, draftFromDetail, toggleObject } from "./state.js";
import type { DetailViewState, QueueViewState } from "./render.js";
import type { ItemDetail } from "./types.js";

export type AppView =
  | ({ kind: "queue"; notice?: string } & QueueViewState)
  | ({ kind: "detail" } & DetailViewState);

export type ViewListener = (view: AppView) => void;

export class App {
  view: AppView = { kind: "queue", items: [], total: 0 };

  private pendingKey?: string;
  private pendingAmend = false;
  private lastReviewer = "";

  constructor(
    private readonly api: ApiClient,
    private readonly onChange: ViewListener = () => {},
  ) {}

  private show(view: AppView): void {
    this.view = view;
    this.onChange(view);
  }

  async loadQueue(notice?: string): Promise<void> {
    try {
      const response = await this.api.queue(0, 100);
      this.show({ kind: "queue", items: response.items, total: response.total, notice });
    } catch (error) {
      this.show({ kind: "queue", items: [], total: 0, error: messageOf(error) });
    }
  }

  async openItem(scanId: string, scenarioIndex: number): Promise<void> {
    try {
      const detail = await this.api.item(scanId, scenarioIndex);
      this.showDetail(detail, draftFromDetail(detail));
    } catch (error) {
      this.show({ kind: "queue", items: [], total: 0, error: messageOf(error) });
    }
  }

  private showDetail(detail: ItemDetail, draft: Draft, extra: Partial<DetailViewState> = {}): void {
    this.show({ kind: "detail", detail, draft, ...extra });
  }

  toggle(objectId: number): void {
    if (this.view.kind !== "detail") {
      return;
    }
    // a draft edit invalidates any failed-submit episode
    this.pendingKey = undefined;
    this.pendingAmend = false;
    this.showDetail(this.view.detail, toggleObject(this.view.draft, objectId));
  }

  async submit(reviewer: string): Promise<void> {
    if (this.view.kind !== "detail") {
      return;
    }
    const { detail, draft } = this.view;
    if (!canSubmit(draft)) {
      this.showDetail(detail, draft, { notice: "Keep at least one object to submit." });
      return;
    }
    if (!reviewer.trim()) {
      this.showDetail(detail, draft, { notice: "Reviewer name is required." });
      return;
    }
    this.lastReviewer = reviewer.trim();
    if (this.pendingKey === undefined) {
      this.pendingKey = newIdempotencyKey();
    }
    await this.postDecision(detail, draft);
  }

  /** Resubmit after a network failure, reusing the episode's key. */
  async retry(): Promise<void> {
    if (this.view.kind !== "detail" || this.pendingKey === undefined) {
      return;
    }
    await this.postDecision(this.view.detail, this.view.draft);
  }

  /** Resubmit after a 409, explicitly marking the decision as an amendment. */
  async amend(): Promise<void> {
    if (this.view.kind !== "detail") {
      return;
    }
    this.pendingAmend = true;
    this.pendingKey = newIdempotencyKey();
    await this.postDecision(this.view.detail, this.view.draft);
  }

  dismissConflict(): void {
    if (this.view.kind !== "detail") {
      return;
    }
    this.pendingAmend = false;
    this.pendingKey = undefined;
    this.showDetail(this.view.detail, this.view.draft);
  }

  async backToQueue(): Promise<void> {
    this.pendingKey = undefined;
    this.pendingAmend = false;
    await this.loadQueue();
  }

  private async postDecision(detail: ItemDetail, draft: Draft): Promise<void> {
    this.showDetail(detail, draft, { submitting: true });
    try {
      await this.api.decide(
        detail.scan_id,
        detail.scenario_index,
        { keptIds: draft.kept, reviewer: this.lastReviewer, amend: this.pendingAmend },
        this.pendingKey,
      );
      this.pendingKey = undefined;
      this.pendingAmend = false;
      await this.loadQueue(`Decision recorded for ${detail.scan_id} #${detail.scenario_index}.`);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.showDetail(detail, draft, { conflict: true });
      } else if (error instanceof ApiError) {
        this.pendingKey = undefined;
        this.pendingAmend = false;
        this.showDetail(detail, draft, { notice: error.detail });
      } else {
        // network failure: the server may or may not have recorded it,
        // so the retry must reuse the same idempotency key
        this.showDetail(detail, draft, { retryOffered: true });
      }
    }
  }
}

function messageOf(error: unknown): string {
  if (error instanceof ApiError) {
    return error.detail;
  }
  return error instanceof Error ? error.message : String(error);
}
