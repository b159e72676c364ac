// DOM rendering for the trading screen: candlestick chart, account strip,
// order form, and (in the explanation phase) the prediction bar graph and the
// selected explanation cards. Rendering is all-or-nothing: a malformed state
// produces only the error banner.

import { ClientDayState, orderKind } from "./state.js";
import { ChartBar, DayView, ExplanationPayload, Prediction } from "./types.js";

const CLASS_LABELS: Record<string, string> = {
  BULL: "BULL (over +2%)",
  NEUTRAL: "NEUTRAL (-2% to +2%)",
  BEAR: "BEAR (under -2%)",
};

function yen(value: number): string {
  return `${Math.round(value).toLocaleString("en-US")} JPY`;
}

export function renderCandlestickSvg(bars: ChartBar[], width = 640, height = 240): string {
  if (bars.length === 0) {
    return `<svg class="chart" viewBox="0 0 ${width} ${height}"></svg>`;
  }
  const lows = Math.min(...bars.map((b) => b.low));
  const highs = Math.max(...bars.map((b) => b.high));
  const span = Math.max(highs - lows, 1e-9);
  const y = (price: number) => height - ((price - lows) / span) * (height - 20) - 10;
  const step = width / bars.length;
  const bodyWidth = Math.max(2, step * 0.6);
  const parts: string[] = [];
  bars.forEach((bar, i) => {
    const cx = step * (i + 0.5);
    const up = bar.close >= bar.open;
    const color = up ? "#c43c3c" : "#3658a8"; // Japanese convention: red up, blue down
    const top = y(Math.max(bar.open, bar.close));
    const bottom = y(Math.min(bar.open, bar.close));
    parts.push(
      `<line class="wick" x1="${cx}" x2="${cx}" y1="${y(bar.high)}" y2="${y(bar.low)}" stroke="${color}"/>`,
      `<rect class="body" x="${cx - bodyWidth / 2}" y="${top}" width="${bodyWidth}" ` +
        `height="${Math.max(1, bottom - top)}" fill="${color}"/>`,
    );
  });
  return `<svg class="chart" viewBox="0 0 ${width} ${height}" role="img" aria-label="price chart">${parts.join("")}</svg>`;
}

export function renderPredictionBars(p: Prediction): string {
  const rows = [
    ["BULL", p.p_bull],
    ["NEUTRAL", p.p_neutral],
    ["BEAR", p.p_bear],
  ] as const;
  const bars = rows
    .map(([label, value]) => {
      const pct = Math.round(value * 100);
      return `
        <div class="prob-row" data-class="${label}">
          <span class="prob-label">${label}</span>
          <span class="prob-track"><span class="prob-fill" style="width:${pct}%"></span></span>
          <span class="prob-value">${pct}%</span>
        </div>`;
    })
    .join("");
  return `<section class="prediction" aria-label="price prediction"><h3>AI prediction</h3>${bars}</section>`;
}

export function renderExplanationCards(explanations: ExplanationPayload[]): string {
  const cards = explanations
    .map((e) => {
      const body =
        e.modality === "text"
          ? `<p class="explanation-text">${escapeHtml(e.text ?? "")}</p>`
          : `<img class="explanation-image" src="${escapeHtml(e.image_url ?? "")}" alt="saliency map for ${e.class}"/>`;
      return `
        <article class="explanation-card" data-id="${escapeHtml(e.id)}" data-class="${e.class}">
          <header>${CLASS_LABELS[e.class] ?? e.class} &middot; ${e.modality}</header>
          ${body}
        </article>`;
    })
    .join("");
  return `<section class="explanations" aria-label="explanations">${cards}</section>`;
}

function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function renderAccount(view: DayView): string {
  const a = view.account;
  return `
    <section class="account">
      <span>Day ${view.day + 1} / 60</span>
      <span>Open: ${yen(view.opening_price)}</span>
      <span>Cash: ${yen(a.cash)}</span>
      <span>Shares: ${a.shares}</span>
      <span>Total: ${yen(a.total_assets)} (${(a.total_rate * 100).toFixed(1)}%)</span>
    </section>`;
}

function renderOrderForm(state: ClientDayState): string {
  const view = state.view as DayView;
  const { min_lots, max_lots } = view.feasible_order;
  const kind = orderKind(state);
  const label = kind === "initial" ? "Initial order" : "Final order";
  const disabled = state.submitting ? "disabled" : "";
  const retry = state.canRetry
    ? `<button type="button" id="retry-order" ${disabled}>Retry</button>`
    : "";
  return `
    <form class="order-form" data-kind="${kind}">
      <label for="lots-input">${label} (lots of ${view.account.lot_size}; buy &gt; 0, sell &lt; 0)</label>
      <input id="lots-input" name="lots" type="number" step="1"
             min="${min_lots}" max="${max_lots}" value="0" ${disabled}/>
      <span class="feasible-range">feasible: ${min_lots} to ${max_lots}</span>
      <button type="submit" id="submit-order" ${disabled}>Submit</button>
      ${retry}
    </form>`;
}

function renderError(state: ClientDayState): string {
  if (state.error === null) {
    return "";
  }
  return `<div class="error-banner" role="alert">${escapeHtml(state.error)}</div>`;
}

function renderFinished(state: ClientDayState): string {
  const result = state.result;
  const detail =
    result && result.final_value !== undefined
      ? `Final assets after liquidation: <strong>${yen(result.final_value)}</strong>`
      : "Session finished.";
  return `
    <div class="screen finished">
      ${renderError(state)}
      <section class="result"><h2>Trading finished</h2><p>${detail}</p></section>
    </div>`;
}

export interface Handlers {
  onSubmit: (lots: number) => void;
  onRetry: () => void;
}

/** Render the whole screen for the current state and wire the form handlers.
 * The prediction graph and explanation cards appear only when the server view
 * itself carries them, which the service guarantees only happens after the
 * initial order was acknowledged. */
export function renderDay(root: HTMLElement, state: ClientDayState, handlers: Handlers): void {
  if (state.result !== null) {
    root.innerHTML = renderFinished(state);
    return;
  }
  const view = state.view;
  if (view === null) {
    root.innerHTML = renderError(state) || `<div class="loading">Loading&hellip;</div>`;
    return;
  }
  const support: string[] = [];
  if (view.phase === "awaiting_final") {
    if (view.prediction !== undefined) {
      support.push(renderPredictionBars(view.prediction));
    }
    if (view.explanations !== undefined && view.explanations.length > 0) {
      support.push(renderExplanationCards(view.explanations));
    }
    if (view.initial_order !== undefined) {
      support.push(
        `<p class="initial-note">Your initial order: <strong>${view.initial_order}</strong> lots. ` +
          "Review the support above, then place your final order.</p>",
      );
    }
  }
  root.innerHTML = `
    <div class="screen phase-${view.phase}">
      ${renderError(state)}
      ${renderAccount(view)}
      ${renderCandlestickSvg(view.chart)}
      ${support.join("")}
      ${renderOrderForm(state)}
    </div>`;

  const form = root.querySelector<HTMLFormElement>("form.order-form");
  form?.addEventListener("submit", (event) => {
    event.preventDefault();
    const input = root.querySelector<HTMLInputElement>("#lots-input");
    const lots = Number.parseInt(input?.value ?? "0", 10);
    handlers.onSubmit(Number.isFinite(lots) ? lots : 0);
  });
  root
    .querySelector<HTMLButtonElement>("#retry-order")
    ?.addEventListener("click", () => handlers.onRetry());
}
