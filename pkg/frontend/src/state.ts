// Client-side state for one session tab: the last server view plus the
// transient UI flags around order submission.

import { DayView, SessionResult } from "./types.js";

export interface ClientDayState {
  sessionId: string;
  view: DayView | null;
  /** Order entry is locked from the moment a submission starts until the
   * server acknowledges or rejects it. */
  submitting: boolean;
  /** Server rejection reason or network-failure message, shown verbatim. */
  error: string | null;
  /** True after a network failure: the same submission may be retried with
   * the same idempotency key. */
  canRetry: boolean;
  retryLots: number | null;
  result: SessionResult | null;
}

export function initialState(sessionId: string): ClientDayState {
  return {
    sessionId,
    view: null,
    submitting: false,
    error: null,
    canRetry: false,
    retryLots: null,
    result: null,
  };
}

export function orderKind(state: ClientDayState): "initial" | "final" {
  return state.view?.phase === "awaiting_final" ? "final" : "initial";
}

/** The explanations panel exists only when the server view carries
 * explanations; the prediction graph only when it carries probabilities. */
export function showsSupport(view: DayView | null): boolean {
  return view !== null && (view.prediction !== undefined || view.explanations !== undefined);
}
