// DOM wiring for the annotator console: one pending item at a time, the
// widget matching the requested feedback type enabled, server-authoritative
// totals, and the cost/quality curve fed by metrics polling.

import { ApiError, SessionClient, pollMetrics } from "./api.js";
import {
  allowedKind,
  applyMetrics,
  buildSubmission,
  correctionEstimate,
  emptyCurve,
  makeItemView,
  setCorrection,
  toggleToken,
} from "./state.js";
import { CurveView, ItemView, MetricsPayload } from "./types.js";

interface AppState {
  client: SessionClient | null;
  item: ItemView | null;
  curve: CurveView;
  busy: boolean;
  error: string;
  stale: boolean;
  endOfStream: boolean;
  lastCost: number | null;
}

const state: AppState = {
  client: null,
  item: null,
  curve: emptyCurve(),
  busy: false,
  error: "",
  stale: false,
  endOfStream: false,
  lastCost: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function renderItem(): void {
  const panel = el<HTMLDivElement>("item-panel");
  const badge = el<HTMLSpanElement>("requested-badge");
  const source = el<HTMLDivElement>("source-tokens");
  const tokens = el<HTMLDivElement>("hypothesis-tokens");
  const correction = el<HTMLTextAreaElement>("correction-input");
  const estimate = el<HTMLSpanElement>("edit-estimate");
  const submit = el<HTMLButtonElement>("submit-button");
  const errorLine = el<HTMLDivElement>("error-line");

  errorLine.textContent = state.error;
  if (!state.item) {
    panel.dataset.state = state.endOfStream ? "done" : "empty";
    badge.textContent = state.endOfStream ? "stream finished" : "-";
    source.replaceChildren();
    tokens.replaceChildren();
    submit.disabled = true;
    return;
  }
  const item = state.item;
  const kind = allowedKind(item.requested);
  panel.dataset.state = "active";
  badge.textContent = item.requested;
  badge.dataset.kind = item.requested;

  source.replaceChildren(
    ...item.sourceTokens.map((text) => {
      const span = document.createElement("span");
      span.className = "token source";
      span.textContent = text;
      return span;
    }),
  );

  tokens.replaceChildren(
    ...item.hypothesisTokens.map((token, index) => {
      const span = document.createElement("span");
      span.className = "token" + (token.marked ? " marked" : "");
      span.textContent = token.text;
      span.dataset.index = String(index);
      if (kind === "marking") {
        span.classList.add("clickable");
        span.onclick = () => {
          state.item = toggleToken(item, index);
          renderItem();
        };
      }
      return span;
    }),
  );

  correction.value = item.correctionBuffer;
  correction.disabled = kind !== "correction";
  correction.oninput = () => {
    state.item = setCorrection(item, correction.value);
    estimate.textContent = state.item
      ? `~${correctionEstimate(state.item)} edits (estimate)`
      : "";
  };
  estimate.textContent =
    kind === "correction" ? `~${correctionEstimate(item)} edits (estimate)` : "";

  submit.disabled = state.busy;
  submit.textContent = kind === "skip" ? "skip" : "submit " + kind;
}

export function renderMetrics(): void {
  el<HTMLSpanElement>("cost-total").textContent = state.curve.ledgerTotal.toFixed(0);
  el<HTMLSpanElement>("stale-badge").hidden = !state.stale;
  el<HTMLSpanElement>("last-cost").textContent =
    state.lastCost === null ? "-" : String(state.lastCost);
  const counts = state.curve.actionCounts;
  el<HTMLSpanElement>("action-histogram").textContent =
    `full ${counts.full} / weak ${counts.weak} / self ${counts.self} / none ${counts.none}`;
  drawCurve(el<HTMLElement>("curve-svg"), state.curve);
}

export function drawCurve(svg: HTMLElement, curve: CurveView): void {
  const width = 420;
  const height = 160;
  const pad = 24;
  if (!curve.points.length) {
    svg.innerHTML = `<text x="${width / 2}" y="${height / 2}" text-anchor="middle" fill="#888">no batches yet</text>`;
    return;
  }
  const xs = curve.points.map((p) => p[0]);
  const ys = curve.points.map((p) => p[1]);
  const xMax = Math.max(...xs, 1);
  const yMin = Math.min(...ys);
  const yMax = Math.max(...ys, yMin + 1e-9);
  const sx = (x: number) => pad + (x / xMax) * (width - 2 * pad);
  const sy = (y: number) => height - pad - ((y - yMin) / (yMax - yMin)) * (height - 2 * pad);
  const path = curve.points.map(([x, y], i) => `${i ? "L" : "M"}${sx(x)},${sy(y)}`).join(" ");
  svg.innerHTML =
    `<path d="${path}" fill="none" stroke="#2b6cb0" stroke-width="2"/>` +
    curve.points
      .map(([x, y]) => `<circle cx="${sx(x)}" cy="${sy(y)}" r="2.5" fill="#2b6cb0"/>`)
      .join("") +
    `<text x="${pad}" y="12" fill="#555">BLEU ${ys[ys.length - 1].toFixed(2)}</text>` +
    `<text x="${width - pad}" y="${height - 6}" text-anchor="end" fill="#555">cost ${xMax.toFixed(0)}</text>`;
}

async function fetchNext(): Promise<void> {
  if (!state.client) return;
  try {
    const payload = await state.client.next();
    if ("end_of_stream" in payload) {
      state.endOfStream = true;
      state.item = null;
    } else {
      state.item = makeItemView(payload);
      state.error = "";
    }
  } catch (err) {
    state.error = err instanceof ApiError ? err.detail : String(err);
  }
  renderItem();
}

async function submitCurrent(): Promise<void> {
  if (!state.client || !state.item || state.busy) return;
  state.busy = true;
  renderItem();
  try {
    const result = await state.client.submit(buildSubmission(state.item, state.client.sessionId));
    state.lastCost = result.cost;
    state.error = "";
    state.item = null;
    await fetchNext();
  } catch (err) {
    // submission rejected: keep the item state so the user can fix it
    state.error = err instanceof ApiError ? err.detail : String(err);
  } finally {
    state.busy = false;
    renderItem();
    renderMetrics();
  }
}

export function onMetrics(payload: MetricsPayload | null): void {
  if (payload === null) {
    state.stale = true;
  } else {
    state.stale = false;
    state.curve = applyMetrics(state.curve, payload);
  }
  renderMetrics();
}

export async function startSession(baseUrl: string, config: Record<string, unknown>): Promise<void> {
  state.client = await SessionClient.create(baseUrl, config);
  el<HTMLSpanElement>("session-id").textContent = state.client.sessionId;
  pollMetrics(state.client, onMetrics);
  await fetchNext();
}

export function wireControls(): void {
  el<HTMLButtonElement>("submit-button").onclick = () => void submitCurrent();
  el<HTMLFormElement>("connect-form").onsubmit = (event) => {
    event.preventDefault();
    const baseUrl = el<HTMLInputElement>("base-url").value.replace(/\/$/, "");
    const config = JSON.parse(el<HTMLTextAreaElement>("session-config").value);
    void startSession(baseUrl, config).catch((err) => {
      state.error = err instanceof ApiError ? err.detail : String(err);
      renderItem();
    });
  };
}

if (typeof document !== "undefined" && document.getElementById("connect-form")) {
  wireControls();
}
