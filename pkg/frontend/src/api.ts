// Thin client over the session-service HTTP/JSON contract.

import {
  EndOfStream,
  FeedbackSubmission,
  MetricsPayload,
  NextItemPayload,
  SubmissionResult,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  const body = await response.json();
  if (!response.ok) {
    throw new ApiError(response.status, body.detail ?? response.statusText);
  }
  return body as T;
}

export class SessionClient {
  constructor(
    public baseUrl: string,
    public sessionId: string,
  ) {}

  static async create(
    baseUrl: string,
    config: Record<string, unknown>,
    clientToken?: string,
  ): Promise<SessionClient> {
    const body = JSON.stringify({ config, client_token: clientToken ?? null });
    const data = await request<{ session_id: string }>(`${baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body,
    });
    return new SessionClient(baseUrl, data.session_id);
  }

  next(): Promise<NextItemPayload | EndOfStream> {
    return request(`${this.baseUrl}/sessions/${this.sessionId}/next`);
  }

  submit(submission: FeedbackSubmission): Promise<SubmissionResult> {
    return request(`${this.baseUrl}/sessions/${this.sessionId}/feedback`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(submission),
    });
  }

  metrics(): Promise<MetricsPayload> {
    return request(`${this.baseUrl}/sessions/${this.sessionId}/metrics`);
  }
}

// Polls metrics forever with exponential backoff on failures; a null
// payload tells the callback to show the stale badge.
export function pollMetrics(
  client: SessionClient,
  onUpdate: (payload: MetricsPayload | null) => void,
  intervalMs = 2000,
  maxBackoffMs = 30000,
): () => void {
  let stopped = false;
  let backoff = intervalMs;

  async function tick() {
    if (stopped) return;
    try {
      const payload = await client.metrics();
      backoff = intervalMs;
      onUpdate(payload);
    } catch {
      backoff = Math.min(backoff * 2, maxBackoffMs);
      onUpdate(null);
    }
    if (!stopped) setTimeout(tick, backoff);
  }

  setTimeout(tick, 0);
  return () => {
    stopped = true;
  };
}
