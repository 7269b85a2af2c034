// DOM rendering: thin, stateless translations of store state into HTML.

import { fmt4, loadPercent, ModerationItem, ServiceConfig } from './api.js';
import { QueueState } from './queue.js';
import { StatsState } from './stats.js';

function esc(text: string): string {
  const div = document.createElement('div');
  div.textContent = text;
  return div.innerHTML;
}

export function renderStats(el: HTMLElement, state: StatsState): void {
  if (!state.stats) {
    el.innerHTML = '<span class="muted">loading stats…</span>';
    return;
  }
  const s = state.stats;
  el.innerHTML = `
    <span>total <b>${s.total}</b></span>
    <span>auto <b>${s.auto_count}</b></span>
    <span>pending <b>${s.pending_count}</b></span>
    <span>resolved <b>${s.resolved_count}</b></span>
    <span>moderation load <b>${loadPercent(s)}</b></span>
    <span>threshold <b>${fmt4(s.threshold)}</b></span>
    ${state.stale ? '<span class="stale">stale — service unreachable</span>' : ''}
  `;
}

export function renderQueue(el: HTMLElement, state: QueueState): void {
  if (state.items.length === 0) {
    el.innerHTML = '<li class="empty">queue clear — nothing pending</li>';
    return;
  }
  el.innerHTML = state.items
    .map((item) => {
      const cls = item.item_id === state.selectedId ? 'item selected' : 'item';
      return `
        <li class="${cls}" data-id="${item.item_id}">
          <span class="unc">${fmt4(item.uncertainty)}</span>
          <span class="snippet">${esc(item.text.slice(0, 80))}</span>
        </li>`;
    })
    .join('');
}

export function renderDetail(
  el: HTMLElement,
  item: ModerationItem | null,
  config: ServiceConfig | null,
  state: QueueState,
): void {
  if (!item) {
    el.innerHTML = '<p class="muted">select a pending item</p>';
    return;
  }
  const names = config?.class_names ?? [];
  const name = (idx: number) => names[idx] ?? `class ${idx}`;
  const probs = item.class_probabilities
    .map((p, idx) => `<tr><td>${esc(name(idx))}</td><td>${fmt4(p)}</td></tr>`)
    .join('');
  const busy = state.inFlight.has(item.item_id);
  const buttons = item.class_probabilities
    .map(
      (_, idx) =>
        `<button data-label="${idx}" ${busy ? 'disabled' : ''}>
          ${idx + 1}&nbsp;· ${esc(name(idx))}</button>`,
    )
    .join('');
  el.innerHTML = `
    <div class="doc-text">${esc(item.text)}</div>
    <dl>
      <dt>model prediction</dt><dd>${esc(name(item.predicted_label))}</dd>
      <dt>uncertainty (${esc(item.score_function)})</dt><dd>${fmt4(item.uncertainty)}</dd>
    </dl>
    <table class="probs"><tbody>${probs}</tbody></table>
    <div class="actions">${buttons}</div>
  `;
}

export function renderBanners(el: HTMLElement, state: QueueState): void {
  const parts = [];
  if (state.error) {
    parts.push(`<div class="banner error">${esc(state.error)}
      <button id="retry">retry</button></div>`);
  }
  if (state.notice) {
    parts.push(`<div class="banner notice">${esc(state.notice)}</div>`);
  }
  el.innerHTML = parts.join('');
}
