// Wire types, mirroring the session service JSON schemas exactly.

export type FeedbackName = "full" | "weak" | "self" | "none";
export type SubmissionKind = "marking" | "correction" | "skip";

export interface NextItemPayload {
  item_id: number;
  source_tokens: string[];
  hypothesis_tokens: string[];
  requested: FeedbackName;
  distribution: number[];
}

export interface EndOfStream {
  end_of_stream: true;
}

export interface FeedbackSubmission {
  session_id: string;
  item_id: number;
  kind: SubmissionKind;
  marking?: boolean[];
  corrected_text?: string;
  client_edit_count?: number;
}

export interface SubmissionResult {
  accepted: boolean;
  cost: number;
  cumulative_cost: number;
  val_bleu?: number;
}

export interface RunRecordPayload {
  j: number;
  cumulative_cost: number;
  val_bleu: number;
  delta: number;
  action_counts: Record<FeedbackName, number>;
  wall_time: number;
}

export interface MetricsPayload {
  records: RunRecordPayload[];
  ledger: {
    total: number;
    per_type: Record<FeedbackName, number>;
    per_type_counts: Record<FeedbackName, number>;
  };
  cursor: number;
  pending_item: number | null;
  val_bleu: number;
}

// View state for the item being annotated.
export interface TokenView {
  text: string;
  marked: boolean;
}

export interface ItemView {
  itemId: number;
  sourceTokens: string[];
  hypothesisTokens: TokenView[];
  requested: FeedbackName;
  correctionBuffer: string;
}

// Accumulated cost/quality curve; points never reorder.
export interface CurveView {
  points: Array<[number, number]>; // (cumulative_cost, val_bleu)
  actionCounts: Record<FeedbackName, number>;
  lastIteration: number;
  ledgerTotal: number;
}
