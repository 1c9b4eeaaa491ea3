/**
 * HTML renderers for the two screens.
 *
 * Pure string-in/string-out so they are trivially testable; the bootstrap
 * assigns the result to innerHTML and wires events by delegation on
 * `data-action` attributes.
 */

import type { Draft } from "./state.js";
import { canSubmit, draftPreview } from "./state.js";
import type { ItemDetail, QueueItem } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export interface QueueViewState {
  items: QueueItem[];
  total: number;
  error?: string;
}

export function renderQueue(state: QueueViewState): string {
  if (state.error !== undefined) {
    return `
      <div class="banner error" role="alert">
        <p>Could not reach the review API: ${escapeHtml(state.error)}</p>
        <button data-action="reload-queue">Retry</button>
      </div>`;
  }
  if (state.items.length === 0) {
    return `<p class="empty">Nothing to review.</p>`;
  }
  const rows = state.items
    .map(
      (item) => `
      <li class="queue-row">
        <button data-action="open-item"
                data-scan="${escapeHtml(item.scan_id)}"
                data-index="${item.scenario_index}">
          <span class="scan">${escapeHtml(item.scan_id)} #${item.scenario_index}</span>
          <span class="description">${escapeHtml(item.description)}</span>
          <span class="count">${item.proposed_count} objects proposed (${escapeHtml(item.source)})</span>
        </button>
      </li>`,
    )
    .join("");
  return `
    <h2>Pending reviews (${state.total})</h2>
    <ul class="queue">${rows}</ul>`;
}

export interface DetailViewState {
  detail: ItemDetail;
  draft: Draft;
  /** transient message under the submit row (validation errors, toasts) */
  notice?: string;
  /** true once the server answered 409: offer the amend path */
  conflict?: boolean;
  /** true after a network failure: offer a same-key retry */
  retryOffered?: boolean;
  submitting?: boolean;
}

export function renderDetail(state: DetailViewState): string {
  const { detail, draft } = state;
  const preview = draftPreview(detail, draft);
  const droppedIds = new Set(preview.droppedRelationIds);
  const submittable = canSubmit(draft) && !state.submitting;

  const objectRows = detail.objects
    .map((row) => {
      const checked = draft.kept.has(row.id) ? " checked" : "";
      const attrs = row.attributes.length > 0 ? ` [${escapeHtml(row.attributes.join(", "))}]` : "";
      return `
      <li class="object-row">
        <label>
          <input type="checkbox" data-action="toggle-object" data-id="${row.id}"${checked}>
          <span class="label">${escapeHtml(row.label)}-${row.id}</span>${attrs}
          <span class="degree">${row.relation_count} relation${row.relation_count === 1 ? "" : "s"}</span>
        </label>
      </li>`;
    })
    .join("");

  const labels = new Map(detail.objects.map((row) => [row.id, row.label]));
  const relationRows = detail.relations
    .map((rel) => {
      const cls = droppedIds.has(rel.id) ? "relation dropped" : "relation";
      const subject = `${labels.get(rel.subject_id) ?? "?"}-${rel.subject_id}`;
      const object = `${labels.get(rel.object_id) ?? "?"}-${rel.object_id}`;
      return `<li class="${cls}">${escapeHtml(subject)} ${escapeHtml(rel.predicate)} ${escapeHtml(object)}</li>`;
    })
    .join("");

  const emptyWarning = canSubmit(draft)
    ? ""
    : `<p class="warning">Keep at least one object to submit.</p>`;
  const conflictBlock = state.conflict
    ? `
      <div class="banner conflict" role="alertdialog">
        <p>This item was already decided. Submit again as an amendment?</p>
        <button data-action="amend-decision">Amend</button>
        <button data-action="dismiss-conflict">Cancel</button>
      </div>`
    : "";
  const retryBlock = state.retryOffered
    ? `
      <div class="banner retry" role="alert">
        <p>Network error while submitting. The decision was not confirmed.</p>
        <button data-action="retry-submit">Retry submission</button>
      </div>`
    : "";
  const notice = state.notice ? `<p class="notice">${escapeHtml(state.notice)}</p>` : "";

  return `
    <button data-action="back-to-queue">&larr; Queue</button>
    <h2>${escapeHtml(detail.scan_id)} #${detail.scenario_index}</h2>
    <p class="scenario">${escapeHtml(detail.description)}</p>
    <section class="objects">
      <h3>Objects</h3>
      <ul>${objectRows}</ul>
      ${emptyWarning}
    </section>
    <section class="relations">
      <h3>Relations</h3>
      <ul>${relationRows || "<li class='relation none'>none</li>"}</ul>
    </section>
    <section class="preview">
      <h3>Pruned preview</h3>
      <code class="sgl">${escapeHtml(preview.sgl) || "(empty)"}</code>
    </section>
    <section class="submit">
      <label>Reviewer <input type="text" id="reviewer-name" placeholder="your name"></label>
      <button data-action="submit-decision"${submittable ? "" : " disabled"}>Submit decision</button>
      ${notice}
      ${conflictBlock}
      ${retryBlock}
    </section>`;
}
