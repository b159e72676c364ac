// Wire types mirroring the session service's JSON responses.

export interface ChartBar {
  date: string;
  open: number;
  high: number;
  low: number;
  close: number;
  volume: number;
}

export interface AccountSnapshot {
  cash: number;
  shares: number;
  lot_size: number;
  total_assets: number;
  total_rate: number;
}

export interface FeasibleOrder {
  min_lots: number;
  max_lots: number;
}

export interface Prediction {
  p_bull: number;
  p_neutral: number;
  p_bear: number;
}

export interface ExplanationPayload {
  id: string;
  class: string;
  modality: "saliency" | "text";
  text?: string;
  image_url?: string;
}

export type Phase = "awaiting_initial" | "awaiting_final" | "finished";

export interface DayView {
  day: number;
  phase: Phase;
  opening_price: number;
  chart: ChartBar[];
  account: AccountSnapshot;
  feasible_order: FeasibleOrder;
  initial_order?: number;
  prediction?: Prediction;
  explanations?: ExplanationPayload[];
}

export interface OrderResponse {
  day: number;
  phase: Phase;
  final_value?: number | null;
}

export interface SessionResult {
  session_id: string;
  strategy: string;
  scenario: string;
  day: number;
  phase: Phase;
  total_assets: number;
  records: number;
  final_value?: number;
}

/** Throws with a readable message when a server payload is not a usable
 * DayView; rendering must not start from a half-valid object. */
export function validateDayView(raw: unknown): DayView {
  const view = raw as DayView;
  if (view === null || typeof view !== "object") {
    throw new Error("day view is not an object");
  }
  if (typeof view.day !== "number" || typeof view.phase !== "string") {
    throw new Error("day view missing day/phase");
  }
  if (!Array.isArray(view.chart)) {
    throw new Error("day view missing chart");
  }
  for (const bar of view.chart) {
    if (
      typeof bar.open !== "number" ||
      typeof bar.high !== "number" ||
      typeof bar.low !== "number" ||
      typeof bar.close !== "number"
    ) {
      throw new Error("chart bar missing prices");
    }
  }
  if (typeof view.opening_price !== "number") {
    throw new Error("day view missing opening price");
  }
  if (
    view.account === undefined ||
    typeof view.account.cash !== "number" ||
    typeof view.account.shares !== "number"
  ) {
    throw new Error("day view missing account snapshot");
  }
  if (
    view.feasible_order === undefined ||
    typeof view.feasible_order.min_lots !== "number" ||
    typeof view.feasible_order.max_lots !== "number"
  ) {
    throw new Error("day view missing feasible order range");
  }
  if (view.prediction !== undefined) {
    const p = view.prediction;
    const sum = p.p_bull + p.p_neutral + p.p_bear;
    if (!(Math.abs(sum - 1) < 1e-6)) {
      throw new Error("prediction probabilities do not sum to 1");
    }
  }
  return view;
}
