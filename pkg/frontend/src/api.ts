// Thin typed client for the session service. Order submissions carry an
// idempotency key that stays fixed for one (day, phase), so a retry after a
// network failure can never double-apply on the server.

import { DayView, OrderResponse, SessionResult, validateDayView } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

function makeKey(): string {
  if (typeof crypto !== "undefined" && "randomUUID" in crypto) {
    return crypto.randomUUID();
  }
  return `key-${Date.now()}-${Math.random().toString(36).slice(2)}`;
}

export class SessionClient {
  private orderKeys = new Map<string, string>();

  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail =
        body !== null && typeof body === "object" && "detail" in body
          ? String((body as { detail: unknown }).detail)
          : `HTTP ${response.status}`;
      throw new ApiError(detail, response.status);
    }
    return body;
  }

  async createSession(strategy: string, scenario: string, participantRef = ""): Promise<string> {
    const body = await this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ strategy, scenario, participant_ref: participantRef }),
    });
    return (body as { session_id: string }).session_id;
  }

  async dayView(sessionId: string): Promise<DayView> {
    const body = await this.request(`/sessions/${sessionId}/day`);
    return validateDayView(body);
  }

  /** The key for one submission attempt; reused across retries, dropped once
   * the server acknowledges. */
  orderKey(sessionId: string, day: number, kind: "initial" | "final"): string {
    const slot = `${sessionId}:${day}:${kind}`;
    let key = this.orderKeys.get(slot);
    if (key === undefined) {
      key = makeKey();
      this.orderKeys.set(slot, key);
    }
    return key;
  }

  async submitOrder(
    sessionId: string,
    day: number,
    kind: "initial" | "final",
    lots: number,
  ): Promise<OrderResponse> {
    const key = this.orderKey(sessionId, day, kind);
    const body = await this.request(`/sessions/${sessionId}/${kind}-order`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ lots, idempotency_key: key }),
    });
    this.orderKeys.delete(`${sessionId}:${day}:${kind}`);
    return body as OrderResponse;
  }

  async result(sessionId: string): Promise<SessionResult> {
    const body = await this.request(`/sessions/${sessionId}/result`);
    return body as SessionResult;
  }
}
