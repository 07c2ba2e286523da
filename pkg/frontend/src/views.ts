/** HTML renderers: pure functions from state to markup. */

import type { TaskView } from "./api.js";
import { statsRows } from "./format.js";
import type { AgreementStats } from "./api.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderRegisterView(): string {
  return `
    <section class="panel">
      <h2>Sign in</h2>
      <p>Enter your annotator name to join the review queue.</p>
      <form id="register-form">
        <input id="annotator-name" type="text" placeholder="your name" autocomplete="off" />
        <button type="submit">Start reviewing</button>
      </form>
      <p id="register-error" class="error" hidden></p>
    </section>
  `;
}

/** The 2x2 render grid beside the instruction, with pass/fail controls.
 * Other annotators' verdicts are never part of the payload, so they can
 * never leak into the view. */
export function renderTaskView(task: TaskView, reasonDraft: string, error: string | null): string {
  const images = task.image_urls
    .map((url, i) => `<img src="${escapeHtml(url)}" alt="render view ${i + 1}" class="view-image" />`)
    .join("\n");
  return `
    <section class="panel task" data-pair-id="${escapeHtml(task.pair_id)}">
      <div class="image-grid">${images}</div>
      <div class="task-detail">
        <h2>Does the model match the instruction?</h2>
        <blockquote id="instruction">${escapeHtml(task.instruction)}</blockquote>
        <textarea id="reason" placeholder="reason (required for fail)">${escapeHtml(reasonDraft)}</textarea>
        <div class="actions">
          <button id="pass-btn" class="pass">Pass (p)</button>
          <button id="fail-btn" class="fail">Fail (f)</button>
        </div>
        <p id="decision-error" class="error" ${error ? "" : "hidden"}>${escapeHtml(error ?? "")}</p>
      </div>
    </section>
  `;
}

export function renderEmptyQueueView(): string {
  return `
    <section class="panel empty">
      <h2>No tasks right now</h2>
      <p>The queue is empty. Checking again shortly.</p>
    </section>
  `;
}

export function renderErrorBanner(message: string): string {
  return `
    <section class="panel banner">
      <p class="error">${escapeHtml(message)}</p>
      <button id="retry-btn">Retry</button>
    </section>
  `;
}

export function renderStatsView(stats: AgreementStats | null): string {
  if (stats === null) {
    return `<aside class="stats" id="stats">Agreement stats unavailable.</aside>`;
  }
  const rows = statsRows(stats)
    .map((row) => `<tr><td>${escapeHtml(row.label)}</td><td>${escapeHtml(row.value)}</td></tr>`)
    .join("\n");
  return `<aside class="stats" id="stats"><table>${rows}</table></aside>`;
}
