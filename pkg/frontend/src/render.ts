// HTML renderers. Pure string-in string-out so they test without a browser;
// app.ts assigns the result to innerHTML.

import type { Health, QueryResponse, TraceStep } from "./api.js";
import type { AppState, Turn } from "./state.js";

export function escapeHtml(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function routeBadge(route: string): string {
  return `<span class="badge route-${escapeHtml(route)}">${escapeHtml(route)}</span>`;
}

export function flagBadges(flags: string[]): string {
  return flags.map((f) => `<span class="badge flag">${escapeHtml(f)}</span>`).join(" ");
}

// fields shown on the card, in display order; anything else lands in extras
const CARD_FIELDS = ["Service Type", "Service Address", "Rate", "Occupancy Factor", "Travel Time"];

export function recommendationCard(rec: Record<string, unknown>): string {
  const name = rec["Service Name"] ?? rec["name"] ?? "?";
  const rows = CARD_FIELDS.filter((k) => rec[k] !== undefined && rec[k] !== null)
    .map(
      (k) =>
        `<div class="field"><span class="label">${escapeHtml(k)}</span>` +
        `<span class="value">${escapeHtml(rec[k])}</span></div>`,
    )
    .join("");
  const extras = Object.entries(rec)
    .filter(([k]) => k !== "Service Name" && k !== "name" && !CARD_FIELDS.includes(k))
    .map(
      ([k, v]) =>
        `<div class="field extra"><span class="label">${escapeHtml(k)}</span>` +
        `<span class="value">${escapeHtml(v)}</span></div>`,
    )
    .join("");
  return `<div class="card recommendation"><h3>${escapeHtml(name)}</h3>${rows}${extras}</div>`;
}

export function alternativesList(alternatives: Record<string, unknown>[]): string {
  if (alternatives.length === 0) return "";
  const items = alternatives
    .map((a) => `<li>${escapeHtml(a["Service Name"] ?? a["name"] ?? a["title"] ?? "?")}</li>`)
    .join("");
  return `<details class="alternatives"><summary>${alternatives.length} alternatives</summary><ul>${items}</ul></details>`;
}

export function traceStepRow(step: TraceStep): string {
  return (
    `<tr><td>${step.seq}</td><td>${escapeHtml(step.agent)}</td>` +
    `<td>${escapeHtml(step.event)}</td>` +
    `<td><code>${escapeHtml(JSON.stringify(step.detail))}</code></td></tr>`
  );
}

export function traceView(steps: TraceStep[]): string {
  const rows = steps.map(traceStepRow).join("");
  return (
    `<table class="trace"><thead><tr><th>#</th><th>agent</th><th>event</th><th>detail</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}

export function errorBanner(message: string): string {
  return `<div class="banner error" role="alert">${escapeHtml(message)}</div>`;
}

export function healthLine(health: Health): string {
  return (
    `<span class="health ok">${health.services} services · ${health.documents} documents · ` +
    `index ${escapeHtml(health.index_hash.slice(0, 12))} · ${escapeHtml(health.provider_mode)}</span>`
  );
}

export function turnView(turn: Turn): string {
  const r: QueryResponse = turn.response;
  const rec = r.recommendation ? recommendationCard(r.recommendation) : "";
  const traceBody = turn.traceOpen && turn.trace ? traceView(turn.trace.steps) : "";
  const traceLabel = turn.traceOpen ? "hide trace" : "show trace";
  return (
    `<section class="turn" data-trace-id="${escapeHtml(r.trace_id)}">` +
    `<div class="question">${escapeHtml(turn.query)}</div>` +
    `<div class="meta">${routeBadge(r.route)} ${flagBadges(r.flags)}` +
    `<span class="timing">${r.hops_used} hops · ${r.elapsed_ms.toFixed(0)} ms</span></div>` +
    `<p class="answer">${escapeHtml(r.answer)}</p>` +
    rec +
    alternativesList(r.alternatives) +
    `<button class="trace-toggle" data-trace-id="${escapeHtml(r.trace_id)}">${traceLabel}</button>` +
    traceBody +
    `</section>`
  );
}

export function renderApp(state: AppState): string {
  const banner = state.banner ? errorBanner(state.banner) : "";
  const turns = state.turns.map(turnView).join("");
  const pending = state.pending ? `<div class="pending">thinking…</div>` : "";
  return banner + turns + pending;
}
