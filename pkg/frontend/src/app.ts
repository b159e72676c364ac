// Session controller: fetches day views, renders, and runs the two-phase
// submission flow with an optimistic lock so a double-click can never reach
// the server twice.

import { ApiError, SessionClient } from "./api.js";
import { renderDay } from "./render.js";
import { ClientDayState, initialState, orderKind } from "./state.js";

export class SessionApp {
  readonly state: ClientDayState;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: SessionClient,
    sessionId: string,
  ) {
    this.state = initialState(sessionId);
  }

  private render(): void {
    renderDay(this.root, this.state, {
      onSubmit: (lots) => void this.submitOrder(lots),
      onRetry: () => void this.retry(),
    });
  }

  /** Resume from the server: the session id is the only state that survives a
   * reload, everything else is replayed from the day view. */
  async refresh(): Promise<void> {
    try {
      const result = await this.client.result(this.state.sessionId);
      if (result.phase === "finished") {
        this.state.result = result;
        this.state.view = null;
        this.render();
        return;
      }
      this.state.view = await this.client.dayView(this.state.sessionId);
      this.state.error = null;
    } catch (err) {
      this.state.view = null;
      this.state.error = err instanceof Error ? err.message : String(err);
    }
    this.render();
  }

  async submitOrder(lots: number): Promise<void> {
    if (this.state.submitting) {
      return; // optimistic lock: a submission is already in flight
    }
    this.state.submitting = true;
    this.state.error = null;
    this.state.canRetry = false;
    this.render();
    const kind = orderKind(this.state);
    const day = this.state.view?.day ?? 0;
    try {
      await this.client.submitOrder(this.state.sessionId, day, kind, lots);
      this.state.submitting = false;
      await this.refresh();
    } catch (err) {
      this.state.submitting = false;
      if (err instanceof ApiError) {
        // server rejection: shown verbatim, the form unlocks for a new entry
        this.state.error = err.message;
        this.render();
      } else {
        // network failure: the idempotency key is still reserved, so a retry
        // cannot double-submit even if the first request actually landed
        this.state.error = `Network failure: ${err instanceof Error ? err.message : String(err)}`;
        this.state.canRetry = true;
        this.state.retryLots = lots;
        this.render();
      }
    }
  }

  async retry(): Promise<void> {
    if (this.state.retryLots === null) {
      return;
    }
    const lots = this.state.retryLots;
    this.state.canRetry = false;
    this.state.retryLots = null;
    await this.submitOrder(lots);
  }
}
