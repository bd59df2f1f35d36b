// Pure view-state transitions; the DOM layer only dispatches these.

import { estimateEditCount } from "./editCount.js";
import {
  CurveView,
  FeedbackName,
  FeedbackSubmission,
  ItemView,
  MetricsPayload,
  NextItemPayload,
  SubmissionKind,
} from "./types.js";

export function makeItemView(payload: NextItemPayload): ItemView {
  return {
    itemId: payload.item_id,
    sourceTokens: [...payload.source_tokens],
    hypothesisTokens: payload.hypothesis_tokens.map((text) => ({ text, marked: false })),
    requested: payload.requested,
    correctionBuffer: payload.hypothesis_tokens.join(" "),
  };
}

// Which input widget the requested feedback type enables.
export function allowedKind(requested: FeedbackName): SubmissionKind {
  if (requested === "weak") return "marking";
  if (requested === "full") return "correction";
  return "skip";
}

export function toggleToken(view: ItemView, index: number): ItemView {
  if (allowedKind(view.requested) !== "marking") return view; // kind gating
  if (index < 0 || index >= view.hypothesisTokens.length) return view;
  const tokens = view.hypothesisTokens.map((t, i) =>
    i === index ? { ...t, marked: !t.marked } : t,
  );
  return { ...view, hypothesisTokens: tokens };
}

export function setCorrection(view: ItemView, text: string): ItemView {
  if (allowedKind(view.requested) !== "correction") return view;
  return { ...view, correctionBuffer: text };
}

export function correctionEstimate(view: ItemView): number {
  const hyp = view.hypothesisTokens.map((t) => t.text).join(" ");
  return estimateEditCount(hyp, view.correctionBuffer);
}

export function buildSubmission(view: ItemView, sessionId: string): FeedbackSubmission {
  const kind = allowedKind(view.requested);
  const base = { session_id: sessionId, item_id: view.itemId, kind };
  if (kind === "marking") {
    return { ...base, marking: view.hypothesisTokens.map((t) => t.marked) };
  }
  if (kind === "correction") {
    return {
      ...base,
      corrected_text: view.correctionBuffer,
      client_edit_count: correctionEstimate(view),
    };
  }
  return base;
}

export function emptyCurve(): CurveView {
  return {
    points: [],
    actionCounts: { full: 0, weak: 0, self: 0, none: 0 },
    lastIteration: 0,
    ledgerTotal: 0,
  };
}

// Append only records newer than anything already charted; never reorder.
export function applyMetrics(view: CurveView, payload: MetricsPayload): CurveView {
  const fresh = payload.records.filter((r) => r.j > view.lastIteration);
  if (!fresh.length && payload.ledger.total === view.ledgerTotal) return view;
  const counts = { ...view.actionCounts };
  const points = [...view.points];
  let last = view.lastIteration;
  for (const rec of fresh) {
    points.push([rec.cumulative_cost, rec.val_bleu]);
    last = rec.j;
    for (const name of ["full", "weak", "self", "none"] as FeedbackName[]) {
      counts[name] += rec.action_counts[name] ?? 0;
    }
  }
  return {
    points,
    actionCounts: counts,
    lastIteration: last,
    ledgerTotal: payload.ledger.total,
  };
}
