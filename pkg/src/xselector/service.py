"""HTTP session service for live human trading sessions.

Implements the two-phase daily protocol: the participant submits an initial
order with only chart information, then sees the prediction bar and the
strategy's selected explanations, and submits a final order. Sessions advance
through a strict phase machine (awaiting_initial -> awaiting_final -> next
day) and every mutation is appended to a per-session JSONL event log; state is
rebuilt by replaying those logs on restart, which also makes finished sessions
auditable order by order.

Responses never contain price bars at or beyond the current day: the chart is
strictly trailing and only the day's opening price is disclosed.
"""

from __future__ import annotations

import datetime as dt
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from pydantic import BaseModel

from .explanations import Combination, DayCandidates, Modality, find_item
from .market import (
    Account,
    OrderRejected,
    PriceSeries,
    apply_order,
    feasible_order_range,
    final_liquidation,
    new_account,
    total_assets,
)
from .policy import PolicyParams, policy_action
from .predictor import PredictionDistribution
from .selector import SelectionResult, StrategyKind, strategy_select
from .simulate import derive_seed
from .user_model import DecisionContext, InteractionRecord, UserModelParams

PHASE_AWAITING_INITIAL = "awaiting_initial"
PHASE_AWAITING_FINAL = "awaiting_final"
PHASE_FINISHED = "finished"


@dataclass
class ServiceState:
    """Loaded data and models shared by all sessions."""

    series: PriceSeries
    predictions: np.ndarray  # (len(series), 3)
    manifest: Mapping[int, DayCandidates]
    scenarios: Mapping[str, int]  # scenario id -> window start day
    policy: PolicyParams | None = None
    user_models: Mapping[str, UserModelParams] = field(default_factory=dict)
    episode_length: int = 60
    lot_size: int = 100
    initial_cash: float = 3_000_000
    chart_window: int = 30
    selection_mode: str = "expected"
    log_dir: Path = Path("session-logs")
    asset_dir: Path | None = None  # base for relative saliency image paths
    ui_dir: Path | None = None  # built browser client, served at /ui when present
    sessions: dict[str, "SessionRuntime"] = field(default_factory=dict)
    registry_lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class Session:
    session_id: str
    strategy: StrategyKind
    scenario: str
    window_start: int
    participant_ref: str
    account: Account
    lot_size: int
    initial_cash: float
    day: int = 0
    phase: str = PHASE_AWAITING_INITIAL
    initial_order: int | None = None
    staged_p: PredictionDistribution | None = None
    staged_rate: float | None = None
    combination: Combination | None = None
    show_prediction: bool = True
    recommended_order: int | None = None
    selection: SelectionResult | None = None
    final_value: float | None = None
    records: list[InteractionRecord] = field(default_factory=list)
    responses_by_key: dict[str, dict] = field(default_factory=dict)


@dataclass
class SessionRuntime:
    session: Session
    lock: threading.Lock = field(default_factory=threading.Lock)


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def _log_path(state: ServiceState, session_id: str) -> Path:
    return state.log_dir / f"{session_id}.jsonl"


def _append_event(state: ServiceState, session_id: str, event: dict) -> None:
    state.log_dir.mkdir(parents=True, exist_ok=True)
    with _log_path(state, session_id).open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(event) + "\n")
        fh.flush()


def create_session(
    state: ServiceState, strategy: str, scenario: str, participant_ref: str = ""
) -> Session:
    try:
        kind = StrategyKind(strategy)
    except ValueError:
        raise HTTPException(status_code=422, detail=f"unknown strategy {strategy!r}")
    if scenario not in state.scenarios:
        raise HTTPException(status_code=422, detail=f"unknown scenario {scenario!r}")
    if kind is StrategyKind.XSELECTOR:
        if state.policy is None or scenario not in state.user_models:
            raise HTTPException(
                status_code=422,
                detail="XSELECTOR condition needs a policy and a user model for the scenario",
            )
    session = Session(
        session_id=uuid.uuid4().hex,
        strategy=kind,
        scenario=scenario,
        window_start=state.scenarios[scenario],
        participant_ref=participant_ref,
        account=new_account(state.initial_cash, state.lot_size),
        lot_size=state.lot_size,
        initial_cash=state.initial_cash,
    )
    with state.registry_lock:
        state.sessions[session.session_id] = SessionRuntime(session=session)
    _append_event(
        state,
        session.session_id,
        {
            "type": "created",
            "session_id": session.session_id,
            "strategy": kind.value,
            "scenario": scenario,
            "window_start": session.window_start,
            "participant_ref": participant_ref,
            "lot_size": state.lot_size,
            "initial_cash": state.initial_cash,
            "episode_length": state.episode_length,
            "ts": _now(),
        },
    )
    return session


def _runtime(state: ServiceState, session_id: str) -> SessionRuntime:
    runtime = state.sessions.get(session_id)
    if runtime is None:
        raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
    return runtime


def _abs_day(session: Session) -> int:
    return session.window_start + session.day


def _current_price(state: ServiceState, session: Session) -> float:
    return float(state.series.opens[_abs_day(session)])


def _explanation_payloads(
    state: ServiceState, session: Session
) -> list[dict]:
    candidates = state.manifest[_abs_day(session)]
    shown = []
    assert session.combination is not None
    for j, item in enumerate(candidates.items):
        if not session.combination.flag(j):
            continue
        entry = {"id": item.id, "class": item.price_class.value, "modality": item.modality.value}
        if item.modality is Modality.TEXT:
            entry["text"] = item.payload
        else:
            entry["image_url"] = f"/explanations/{item.id}/image"
        shown.append(entry)
    return shown


def day_view(state: ServiceState, session: Session) -> dict:
    """Phase-appropriate view of the current day; never discloses bars at or
    beyond the current day."""
    if session.phase == PHASE_FINISHED:
        raise HTTPException(status_code=409, detail="session is finished")
    abs_day = _abs_day(session)
    first = max(0, abs_day - state.chart_window)
    chart = [
        {
            "date": bar.date.isoformat(),
            "open": bar.open,
            "high": bar.high,
            "low": bar.low,
            "close": bar.close,
            "volume": bar.volume,
        }
        for bar in state.series.bars[first:abs_day]
    ]
    price = _current_price(state, session)
    lo, hi = feasible_order_range(session.account, price)
    view: dict = {
        "day": session.day,
        "phase": session.phase,
        "opening_price": price,
        "chart": chart,
        "account": {
            "cash": session.account.cash,
            "shares": session.account.shares,
            "lot_size": session.account.lot_size,
            "total_assets": total_assets(session.account, price),
            "total_rate": total_assets(session.account, price) / session.initial_cash - 1.0,
        },
        "feasible_order": {"min_lots": lo, "max_lots": hi},
    }
    if session.phase == PHASE_AWAITING_FINAL:
        view["initial_order"] = session.initial_order
        if session.show_prediction:
            assert session.staged_p is not None
            view["prediction"] = {
                "p_bull": session.staged_p.p_bull,
                "p_neutral": session.staged_p.p_neutral,
                "p_bear": session.staged_p.p_bear,
            }
        view["explanations"] = _explanation_payloads(state, session)
    return view


def submit_initial_order(
    state: ServiceState, session: Session, lots: int, idempotency_key: str | None = None
) -> dict:
    """Record the pre-explanation order and run the condition's selection.

    The selection result is cached on the session so repeated day views are
    stable; nothing mutates if validation fails."""
    if idempotency_key and idempotency_key in session.responses_by_key:
        return session.responses_by_key[idempotency_key]
    if session.phase != PHASE_AWAITING_INITIAL:
        raise HTTPException(status_code=409, detail=f"protocol error: phase is {session.phase}")
    price = _current_price(state, session)
    lo, hi = feasible_order_range(session.account, price)
    if not lo <= lots <= hi:
        raise HTTPException(
            status_code=400,
            detail=f"infeasible order {lots}: feasible range is [{lo}, {hi}]",
        )
    abs_day = _abs_day(session)
    p_row = state.predictions[abs_day]
    if not np.all(np.isfinite(p_row)):
        raise HTTPException(status_code=500, detail=f"no prediction for day {abs_day}")
    p = PredictionDistribution.from_array(p_row)
    rate = total_assets(session.account, price) / session.initial_cash - 1.0
    context = DecisionContext(
        day_index=session.day, p=p, total_rate=rate, initial_order=int(lots)
    )
    selection = strategy_select(
        session.strategy,
        context,
        state.manifest[abs_day],
        seed=derive_seed(_seed_from_id(session.session_id), session.day, 2),
        user_model=state.user_models.get(session.scenario),
        policy=state.policy,
        account=session.account,
        price=price,
        mode=state.selection_mode,
    )
    if selection.selection is not None:
        recommended: int | None = selection.selection.recommended_order
    elif state.policy is not None:
        recommended = policy_action(state.policy, context, session.account, price).lots
    else:
        recommended = None

    session.initial_order = int(lots)
    session.staged_p = p
    session.staged_rate = rate
    session.combination = selection.combination
    session.show_prediction = selection.show_prediction
    session.recommended_order = recommended
    session.selection = selection.selection
    session.phase = PHASE_AWAITING_FINAL

    _append_event(
        state,
        session.session_id,
        {
            "type": "initial",
            "day": session.day,
            "initial_order": int(lots),
            "p": [p.p_bull, p.p_neutral, p.p_bear],
            "total_rate": rate,
            "combination": selection.combination.to_json(),
            "show_prediction": selection.show_prediction,
            "recommended_order": recommended,
            "idempotency_key": idempotency_key,
            "ts": _now(),
        },
    )
    response = {"day": session.day, "phase": session.phase}
    if idempotency_key:
        session.responses_by_key[idempotency_key] = response
    return response


def submit_final_order(
    state: ServiceState, session: Session, lots: int, idempotency_key: str | None = None
) -> dict:
    """Apply the post-explanation order, log the day, and advance or finish."""
    if idempotency_key and idempotency_key in session.responses_by_key:
        return session.responses_by_key[idempotency_key]
    if session.phase != PHASE_AWAITING_FINAL:
        raise HTTPException(status_code=409, detail=f"protocol error: phase is {session.phase}")
    price = _current_price(state, session)
    try:
        account = apply_order(session.account, int(lots), price)
    except OrderRejected as exc:
        raise HTTPException(status_code=400, detail=str(exc))

    assert session.staged_p is not None and session.staged_rate is not None
    assert session.initial_order is not None and session.combination is not None
    session.account = account
    session.records.append(
        InteractionRecord(
            context=DecisionContext(
                day_index=session.day,
                p=session.staged_p,
                total_rate=session.staged_rate,
                initial_order=session.initial_order,
            ),
            combination=session.combination,
            final_order=int(lots),
            session_id=session.session_id,
            timestamp=_now(),
        )
    )
    _append_event(
        state,
        session.session_id,
        {
            "type": "final",
            "day": session.day,
            "final_order": int(lots),
            "idempotency_key": idempotency_key,
            "ts": _now(),
        },
    )

    last_day = session.day == state.episode_length - 1
    if last_day:
        session.final_value = final_liquidation(
            session.account, state.series, _abs_day(session)
        )
        session.phase = PHASE_FINISHED
        _append_event(
            state,
            session.session_id,
            {"type": "finished", "final_value": session.final_value, "ts": _now()},
        )
    else:
        session.day += 1
        session.phase = PHASE_AWAITING_INITIAL
        session.initial_order = None
        session.staged_p = None
        session.staged_rate = None
        session.combination = None
        session.selection = None

    response = {
        "day": session.day,
        "phase": session.phase,
        "final_value": session.final_value,
    }
    if idempotency_key:
        session.responses_by_key[idempotency_key] = response
    return response


def session_result(state: ServiceState, session: Session) -> dict:
    price_day = min(_abs_day(session), len(state.series) - 1)
    out = {
        "session_id": session.session_id,
        "strategy": session.strategy.value,
        "scenario": session.scenario,
        "day": session.day,
        "phase": session.phase,
        "total_assets": total_assets(session.account, float(state.series.opens[price_day])),
        "records": len(session.records),
    }
    if session.final_value is not None:
        out["final_value"] = session.final_value
    return out


def _seed_from_id(session_id: str) -> int:
    return int.from_bytes(session_id.encode("utf-8")[:8].ljust(8, b"\0"), "big") % (2**31)


# ---------------------------------------------------------------------------
# Event-log replay
# ---------------------------------------------------------------------------

def replay_session_log(state: ServiceState, path: str | Path) -> Session:
    """Rebuild a session from its append-only event log.

    Orders are re-applied against the price series, so the reconstructed
    account (and recomputed liquidation value) must match what the live
    session reported; combination and prediction values are taken from the
    log rather than recomputed."""
    events = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    if not events or events[0]["type"] != "created":
        raise ValueError(f"{path}: log does not start with a created event")
    head = events[0]
    session = Session(
        session_id=head["session_id"],
        strategy=StrategyKind(head["strategy"]),
        scenario=head["scenario"],
        window_start=int(head["window_start"]),
        participant_ref=head.get("participant_ref", ""),
        account=new_account(head["initial_cash"], head["lot_size"]),
        lot_size=int(head["lot_size"]),
        initial_cash=float(head["initial_cash"]),
    )
    episode_length = int(head.get("episode_length", state.episode_length))
    for event in events[1:]:
        if event["type"] == "initial":
            if session.phase != PHASE_AWAITING_INITIAL or event["day"] != session.day:
                raise ValueError(f"{path}: initial event out of order at day {event['day']}")
            session.initial_order = int(event["initial_order"])
            session.staged_p = PredictionDistribution.from_array(event["p"])
            session.staged_rate = float(event["total_rate"])
            session.combination = Combination.from_json(event["combination"])
            session.show_prediction = bool(event["show_prediction"])
            session.recommended_order = event.get("recommended_order")
            session.phase = PHASE_AWAITING_FINAL
        elif event["type"] == "final":
            if session.phase != PHASE_AWAITING_FINAL or event["day"] != session.day:
                raise ValueError(f"{path}: final event out of order at day {event['day']}")
            price = float(state.series.opens[session.window_start + session.day])
            session.account = apply_order(session.account, int(event["final_order"]), price)
            assert session.staged_p is not None and session.staged_rate is not None
            assert session.initial_order is not None and session.combination is not None
            session.records.append(
                InteractionRecord(
                    context=DecisionContext(
                        day_index=session.day,
                        p=session.staged_p,
                        total_rate=session.staged_rate,
                        initial_order=session.initial_order,
                    ),
                    combination=session.combination,
                    final_order=int(event["final_order"]),
                    session_id=session.session_id,
                    timestamp=event.get("ts", ""),
                )
            )
            if session.day == episode_length - 1:
                session.final_value = final_liquidation(
                    session.account, state.series, session.window_start + session.day
                )
                session.phase = PHASE_FINISHED
            else:
                session.day += 1
                session.phase = PHASE_AWAITING_INITIAL
        elif event["type"] == "finished":
            if session.final_value is None:
                raise ValueError(f"{path}: finished event before the last final order")
            logged = float(event["final_value"])
            if abs(logged - session.final_value) > 1e-9:
                raise ValueError(
                    f"{path}: replayed final value {session.final_value} != logged {logged}"
                )
        else:
            raise ValueError(f"{path}: unknown event type {event['type']!r}")
    return session


def load_sessions(state: ServiceState) -> int:
    """Replay every session log found in the log directory; returns the count."""
    if not state.log_dir.exists():
        return 0
    count = 0
    for path in sorted(state.log_dir.glob("*.jsonl")):
        session = replay_session_log(state, path)
        with state.registry_lock:
            state.sessions[session.session_id] = SessionRuntime(session=session)
        count += 1
    return count


# ---------------------------------------------------------------------------
# FastAPI wiring
# ---------------------------------------------------------------------------

class CreateSessionRequest(BaseModel):
    strategy: str
    scenario: str
    participant_ref: str = ""


class OrderRequest(BaseModel):
    lots: int
    idempotency_key: str | None = None


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="explanation-selection trading sessions")

    @app.post("/sessions")
    def post_session(body: CreateSessionRequest) -> dict:
        session = create_session(state, body.strategy, body.scenario, body.participant_ref)
        return {"session_id": session.session_id, "day": session.day, "phase": session.phase}

    @app.get("/sessions/{session_id}/day")
    def get_day(session_id: str) -> dict:
        runtime = _runtime(state, session_id)
        with runtime.lock:
            return day_view(state, runtime.session)

    @app.post("/sessions/{session_id}/initial-order")
    def post_initial(session_id: str, body: OrderRequest) -> dict:
        runtime = _runtime(state, session_id)
        with runtime.lock:
            return submit_initial_order(state, runtime.session, body.lots, body.idempotency_key)

    @app.post("/sessions/{session_id}/final-order")
    def post_final(session_id: str, body: OrderRequest) -> dict:
        runtime = _runtime(state, session_id)
        with runtime.lock:
            return submit_final_order(state, runtime.session, body.lots, body.idempotency_key)

    @app.get("/sessions/{session_id}/result")
    def get_result(session_id: str) -> dict:
        runtime = _runtime(state, session_id)
        with runtime.lock:
            return session_result(state, runtime.session)

    @app.get("/explanations/{item_id}/image")
    def get_image(item_id: str):
        try:
            item = find_item(state.manifest, item_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown explanation {item_id!r}")
        if item.modality is not Modality.SALIENCY:
            raise HTTPException(status_code=404, detail="not an image explanation")
        if not item.payload:
            raise HTTPException(status_code=404, detail="no image stored for this item")
        path = Path(item.payload)
        if not path.is_absolute() and state.asset_dir is not None:
            path = state.asset_dir / path
        if not path.exists():
            raise HTTPException(status_code=404, detail="image file missing")
        return FileResponse(path)

    if state.ui_dir is not None and state.ui_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=state.ui_dir, html=True), name="ui")

    return app
