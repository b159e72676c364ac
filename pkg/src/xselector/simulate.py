"""End-to-end desk-scale experiments with synthetic users.

A synthetic user trades one 60-day scenario window under a presentation
strategy: each day it forms an initial order from price momentum, sees
whatever the strategy presents (prediction bar and/or explanations), shifts
its order accordingly, and executes at the day's open. Rule-based users
respond linearly to the class balance of the flagged explanations; an
oracle-mode user instead shifts exactly by a user model's predicted delta,
which is what makes selector-dominance claims testable.

Experiments are pure functions of (config, master seed): every random draw
comes from a generator keyed by stable integer tuples, and user seeds are
shared across strategies so comparisons are paired.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .explanations import Combination, DayCandidates, Modality
from .market import (
    CLASS_SIGN,
    Account,
    PriceSeries,
    apply_order,
    feasible_order_range,
    final_liquidation,
    new_account,
    total_assets,
)
from .policy import PolicyParams, policy_action
from .predictor import PredictionDistribution
from .selector import StrategyKind, strategy_select
from .user_model import (
    DecisionContext,
    InteractionRecord,
    UserModelParams,
    predict_decision,
)

MOMENTUM_LOOKBACK = 5


def derive_seed(*keys: int) -> int:
    """Stable scalar seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def round_lots(x: float) -> int:
    """Round to whole lots, halves away from zero."""
    return int(np.sign(x) * np.floor(abs(x) + 0.5))


@dataclass(frozen=True)
class SyntheticUser:
    """Deterministic simulated participant.

    Rule-based behavior: the initial order follows recent momentum; the final
    order shifts by the susceptibility-weighted class balance of the flagged
    explanations plus a prediction-visibility term. With `oracle_model` set,
    the final-order shift is exactly the model's predicted delta instead.
    """

    seed: int
    momentum_sensitivity: float = 0.0
    text_susceptibility: float = 0.0
    saliency_susceptibility: float = 0.0
    prediction_weight: float = 0.0
    noise_sigma: float = 0.0
    contrarian: bool = False
    oracle_model: UserModelParams | None = None


def synthetic_initial_order(
    user: SyntheticUser,
    series: PriceSeries,
    day: int,
    account: Account,
    price: float,
) -> int:
    """Momentum-driven pre-explanation order, clipped to feasibility."""
    if day <= MOMENTUM_LOOKBACK:
        raise IndexError(f"day {day} lacks {MOMENTUM_LOOKBACK}-day momentum history")
    momentum = (series.closes[day - 1] / series.closes[day - 1 - MOMENTUM_LOOKBACK] - 1.0) * 100.0
    if user.contrarian:
        momentum = -momentum
    raw = user.momentum_sensitivity * momentum
    if user.noise_sigma > 0:
        rng = np.random.default_rng([user.seed, day, 0])
        raw += rng.normal(0.0, user.noise_sigma)
    lo, hi = feasible_order_range(account, price)
    return int(np.clip(round_lots(raw), lo, hi))


def explanation_signal(
    candidates: DayCandidates, combination: Combination
) -> tuple[float, float]:
    """Net class signal of the flagged items, (text, saliency); BULL counts +1,
    BEAR -1, NEUTRAL 0."""
    text = 0.0
    saliency = 0.0
    for j, item in enumerate(candidates.items):
        if not combination.flag(j):
            continue
        sign = CLASS_SIGN[item.price_class]
        if item.modality is Modality.TEXT:
            text += sign
        else:
            saliency += sign
    return text, saliency


def synthetic_final_order(
    user: SyntheticUser,
    context: DecisionContext,
    combination: Combination,
    candidates: DayCandidates,
    show_prediction: bool,
    account: Account,
    price: float,
) -> int:
    """Post-explanation order, clipped to feasibility.

    Deterministic for a fixed user seed and day index; with zero
    susceptibilities and the prediction hidden the order equals the initial
    one (up to noise)."""
    if user.oracle_model is not None:
        shift = predict_decision(
            user.oracle_model, context, candidates, combination
        ).predicted_delta
    else:
        net_text, net_sal = explanation_signal(candidates, combination)
        shift = (
            user.text_susceptibility * net_text
            + user.saliency_susceptibility * net_sal
        )
        if show_prediction:
            shift += user.prediction_weight * (context.p.p_bull - context.p.p_bear)
    if user.noise_sigma > 0:
        rng = np.random.default_rng([user.seed, context.day_index, 1])
        shift += rng.normal(0.0, user.noise_sigma)
    lo, hi = feasible_order_range(account, price)
    return int(np.clip(round_lots(context.initial_order + shift), lo, hi))


@dataclass
class ModelBundle:
    """Per-day predictions plus the models a strategy may need."""

    predictions: np.ndarray  # (len(series), 3); NaN rows are unusable days
    policy: PolicyParams | None = None
    user_model: UserModelParams | None = None
    selection_mode: str = "expected"


@dataclass(frozen=True)
class DayOutcome:
    day: int        # absolute series index
    day_index: int  # scenario-relative index
    initial_order: int
    final_order: int
    combination: Combination
    show_prediction: bool
    recommended_order: int | None


@dataclass
class EpisodeResult:
    strategy: StrategyKind
    scenario_start: int
    user_seed: int
    session_id: str
    assets: np.ndarray  # (episode_length + 1,) marked at each day's open
    final_value: float
    days: tuple[DayOutcome, ...]


def run_episode(
    strategy: StrategyKind,
    series: PriceSeries,
    manifest: Mapping[int, DayCandidates],
    window_start: int,
    user: SyntheticUser,
    models: ModelBundle,
    episode_length: int = 60,
    lot_size: int = 100,
    initial_cash: float = 3_000_000,
    session_id: str = "",
) -> tuple[EpisodeResult, list[InteractionRecord]]:
    """Trade one scenario window under a strategy; returns the trajectory and
    the interaction log (one record per day, context day indices
    scenario-relative)."""
    if window_start + episode_length + 5 > len(series):
        raise ValueError(
            f"window [{window_start}, {window_start + episode_length}) needs a "
            f"5-day tail inside a series of {len(series)}"
        )
    account = new_account(initial_cash, lot_size)
    assets = [total_assets(account, float(series.opens[window_start]))]
    outcomes: list[DayOutcome] = []
    records: list[InteractionRecord] = []

    for t in range(episode_length):
        day = window_start + t
        price = float(series.opens[day])
        p_row = models.predictions[day]
        if not np.all(np.isfinite(p_row)):
            raise ValueError(f"no prediction available for day {day}")
        p = PredictionDistribution.from_array(p_row)
        rate = total_assets(account, price) / initial_cash - 1.0
        d_prime = synthetic_initial_order(user, series, day, account, price)
        context = DecisionContext(
            day_index=t, p=p, total_rate=rate, initial_order=d_prime
        )
        selection = strategy_select(
            strategy,
            context,
            manifest[day],
            seed=derive_seed(user.seed, t, 2),
            user_model=models.user_model,
            policy=models.policy,
            account=account,
            price=price,
            mode=models.selection_mode,
        )
        if selection.selection is not None:
            recommended: int | None = selection.selection.recommended_order
        elif models.policy is not None:
            recommended = policy_action(models.policy, context, account, price).lots
        else:
            recommended = None
        d = synthetic_final_order(
            user, context, selection.combination, manifest[day],
            selection.show_prediction, account, price,
        )
        account = apply_order(account, d, price)
        assets.append(total_assets(account, float(series.opens[day + 1])))
        outcomes.append(
            DayOutcome(
                day=day,
                day_index=t,
                initial_order=d_prime,
                final_order=d,
                combination=selection.combination,
                show_prediction=selection.show_prediction,
                recommended_order=recommended,
            )
        )
        records.append(
            InteractionRecord(
                context=context,
                combination=selection.combination,
                final_order=d,
                session_id=session_id,
                timestamp=f"day-{t:02d}",
            )
        )

    final_value = final_liquidation(account, series, window_start + episode_length - 1)
    result = EpisodeResult(
        strategy=strategy,
        scenario_start=window_start,
        user_seed=user.seed,
        session_id=session_id,
        assets=np.array(assets),
        final_value=final_value,
        days=tuple(outcomes),
    )
    return result, records


def replay_final_value(
    series: PriceSeries,
    window_start: int,
    final_orders: Sequence[int],
    lot_size: int = 100,
    initial_cash: float = 3_000_000,
) -> float:
    """Re-run the order sequence of a finished episode; used to audit logs."""
    account = new_account(initial_cash, lot_size)
    for t, order in enumerate(final_orders):
        account = apply_order(account, int(order), float(series.opens[window_start + t]))
    return final_liquidation(account, series, window_start + len(final_orders) - 1)


@dataclass
class UserPopulation:
    """Template for sampling a homogeneous synthetic-user population."""

    momentum_sensitivity: float = 0.3
    text_susceptibility: float = 0.0
    saliency_susceptibility: float = 0.0
    prediction_weight: float = 0.0
    noise_sigma: float = 0.0
    contrarian_fraction: float = 0.0
    oracle_model: UserModelParams | None = None

    def user(self, seed: int) -> SyntheticUser:
        contrarian = False
        if self.contrarian_fraction > 0:
            contrarian = bool(
                np.random.default_rng([seed, 3]).random() < self.contrarian_fraction
            )
        return SyntheticUser(
            seed=seed,
            momentum_sensitivity=self.momentum_sensitivity,
            text_susceptibility=self.text_susceptibility,
            saliency_susceptibility=self.saliency_susceptibility,
            prediction_weight=self.prediction_weight,
            noise_sigma=self.noise_sigma,
            contrarian=contrarian,
            oracle_model=self.oracle_model,
        )


@dataclass
class ExperimentConfig:
    strategies: tuple[StrategyKind, ...]
    scenarios: Mapping[str, int]  # scenario id -> window start day
    n_users: int
    master_seed: int
    population: UserPopulation = field(default_factory=UserPopulation)
    episode_length: int = 60
    lot_size: int = 100
    initial_cash: float = 3_000_000

    def __post_init__(self) -> None:
        if self.n_users < 1:
            raise ValueError("need at least one user per condition")
        if not self.strategies:
            raise ValueError("no strategies configured")
        if not self.scenarios:
            raise ValueError("no scenarios configured")


@dataclass
class ConditionSummary:
    scenario: str
    strategy: StrategyKind
    mean_assets: np.ndarray  # (episode_length + 1,)
    se_assets: np.ndarray    # (episode_length + 1,)
    final_values: np.ndarray  # (n_users,)
    episodes: list[EpisodeResult]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summaries: dict[tuple[str, StrategyKind], ConditionSummary]
    records: list[InteractionRecord]

    def summary(self, scenario: str, strategy: StrategyKind) -> ConditionSummary:
        return self.summaries[(scenario, strategy)]


def run_experiment(
    config: ExperimentConfig,
    series: PriceSeries,
    manifest: Mapping[int, DayCandidates],
    models: ModelBundle,
) -> ExperimentResult:
    """Run N paired users through every scenario x strategy condition.

    User seeds derive from (master seed, scenario, user) only, so the same
    simulated participants face every strategy; the whole run is a pure
    function of the config."""
    summaries: dict[tuple[str, StrategyKind], ConditionSummary] = {}
    all_records: list[InteractionRecord] = []
    for s_idx, scenario in enumerate(sorted(config.scenarios)):
        window_start = config.scenarios[scenario]
        for strategy in config.strategies:
            episodes = []
            for k in range(config.n_users):
                seed = derive_seed(config.master_seed, s_idx, k)
                user = config.population.user(seed)
                session_id = f"{scenario}-{strategy.value}-u{k:03d}"
                episode, records = run_episode(
                    strategy,
                    series,
                    manifest,
                    window_start,
                    user,
                    models,
                    episode_length=config.episode_length,
                    lot_size=config.lot_size,
                    initial_cash=config.initial_cash,
                    session_id=session_id,
                )
                episodes.append(episode)
                all_records.extend(records)
            trajectories = np.stack([ep.assets for ep in episodes])
            mean = trajectories.mean(axis=0)
            if len(episodes) > 1:
                se = trajectories.std(axis=0, ddof=1) / np.sqrt(len(episodes))
            else:
                se = np.zeros_like(mean)
            summaries[(scenario, strategy)] = ConditionSummary(
                scenario=scenario,
                strategy=strategy,
                mean_assets=mean,
                se_assets=se,
                final_values=np.array([ep.final_value for ep in episodes]),
                episodes=episodes,
            )
    return ExperimentResult(config=config, summaries=summaries, records=all_records)


def write_summary_csv(result: ExperimentResult, scenario: str, path: str | Path) -> None:
    """Per-day trajectory CSV for one scenario: day,strategy,mean_assets,se."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "strategy", "mean_assets", "se"])
        for strategy in result.config.strategies:
            summary = result.summaries[(scenario, strategy)]
            for day, (mean, se) in enumerate(zip(summary.mean_assets, summary.se_assets)):
                writer.writerow([day, strategy.value, repr(float(mean)), repr(float(se))])
