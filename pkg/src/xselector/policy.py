"""Reward-trained trading policy producing the recommended order.

The policy maps (prediction distribution, total rate, holdings fraction) to
one of five order fractions {-1, -0.5, 0, +0.5, +1} of current capacity. It
is learned by fitted action-value iteration over transitions collected with a
uniform-random exploration policy on the historical series; the per-day reward
is the change in total assets, and actions execute at the day's open.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .market import (
    Account,
    PriceSeries,
    apply_order,
    buy_capacity,
    new_account,
    sell_capacity,
    total_assets,
)
from .user_model import DecisionContext
from .weights_io import load_weights, save_weights

FRACTIONS = (-1.0, -0.5, 0.0, 0.5, 1.0)
_N_FEATURES = 8


def asset_reward(previous_assets: float, current_assets: float) -> float:
    """Daily reward: today's total assets minus yesterday's."""
    return current_assets - previous_assets


@dataclass(frozen=True)
class PolicyAction:
    fraction: float
    lots: int


@dataclass
class PolicyConfig:
    gamma: float = 0.95
    iterations: int = 30
    exploration_episodes: int = 200
    episode_length: int = 60
    ridge: float = 1e-6
    initial_cash: float = 3_000_000
    seed: int = 0


@dataclass
class PolicyParams:
    config: PolicyConfig
    weights: np.ndarray  # (5, n_features) action-score weights

    def arrays(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights}


def init_policy(config: PolicyConfig | None = None) -> PolicyParams:
    config = config or PolicyConfig()
    return PolicyParams(config=config, weights=np.zeros((len(FRACTIONS), _N_FEATURES)))


def holdings_fraction(account: Account, price: float) -> float:
    total = total_assets(account, price)
    if total <= 0:
        return 0.0
    return account.shares * price / total


def state_features(p_vec: np.ndarray, total_rate: float, hold_frac: float) -> np.ndarray:
    tilt = p_vec[0] - p_vec[2]
    return np.array(
        [1.0, p_vec[0], p_vec[1], p_vec[2], tilt, total_rate, hold_frac, hold_frac * tilt]
    )


def realize_fraction(fraction: float, account: Account, price: float) -> int:
    """Scale a signed capacity fraction to a feasible whole-lot order.

    Magnitudes round half away from zero; capacity is affordable lots on the
    buy side and held lots on the sell side, so the result is always feasible.
    """
    if fraction > 0:
        capacity = buy_capacity(account, price)
    elif fraction < 0:
        capacity = sell_capacity(account)
    else:
        return 0
    lots = int(np.floor(abs(fraction) * capacity + 0.5))
    return lots if fraction > 0 else -lots


def action_scores(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    return params.weights @ features


def _greedy_index(scores: np.ndarray) -> int:
    """Argmax with deterministic tie-breaking: smallest |fraction| first,
    buys before sells on equal magnitude."""
    best = scores.max()
    tied = [i for i, s in enumerate(scores) if s == best]
    return min(tied, key=lambda i: (abs(FRACTIONS[i]), -FRACTIONS[i]))


def policy_action(
    params: PolicyParams, context: DecisionContext, account: Account, price: float
) -> PolicyAction:
    """Greedy recommended order for the current state; always feasible."""
    features = state_features(
        context.p.as_array(), context.total_rate, holdings_fraction(account, price)
    )
    idx = _greedy_index(action_scores(params, features))
    fraction = FRACTIONS[idx]
    return PolicyAction(fraction=fraction, lots=realize_fraction(fraction, account, price))


def policy_distribution(
    params: PolicyParams,
    context: DecisionContext,
    account: Account,
    price: float,
    temperature: float = 1.0,
) -> np.ndarray:
    """Softmax over action scores; the zero-temperature limit is one-hot on
    the greedy action. The argmax always agrees with policy_action."""
    features = state_features(
        context.p.as_array(), context.total_rate, holdings_fraction(account, price)
    )
    scores = action_scores(params, features)
    if temperature <= 0:
        probs = np.zeros(len(FRACTIONS))
        probs[_greedy_index(scores)] = 1.0
        return probs
    shifted = (scores - scores.max()) / temperature
    exp = np.exp(shifted)
    return exp / exp.sum()


def distribution_argmax(probs: np.ndarray) -> int:
    """Index of the most probable action, using the greedy tie-break rule."""
    return _greedy_index(probs)


def train_policy(
    series: PriceSeries,
    predictions: np.ndarray,
    config: PolicyConfig | None = None,
    day_range: tuple[int, int] | None = None,
) -> PolicyParams:
    """Fitted action-value iteration on exploration rollouts over the series.

    `predictions` holds one probability row per series day (NaN rows are
    unusable); episodes start at uniform-random eligible days in `day_range`
    and run for `episode_length` days with uniform-random actions. Rewards are
    normalized by the initial cash to keep the regression well-scaled.
    Deterministic for a fixed seed.
    """
    config = config or PolicyConfig()
    predictions = np.asarray(predictions, dtype=float)
    if predictions.shape != (len(series), 3):
        raise ValueError(f"predictions must be ({len(series)}, 3), got {predictions.shape}")

    usable = np.where(np.all(np.isfinite(predictions), axis=1))[0]
    if usable.size == 0:
        raise ValueError("no usable prediction rows")
    lo = int(usable.min()) if day_range is None else day_range[0]
    hi = (len(series) - 1) if day_range is None else day_range[1]
    last_start = hi - config.episode_length
    if last_start < lo:
        raise ValueError(
            f"day range [{lo}, {hi}] too short for {config.episode_length}-day episodes"
        )
    if not np.all(np.isfinite(predictions[lo : hi + 1])):
        raise ValueError("NaN prediction rows inside the training day range")

    rng = np.random.default_rng(config.seed)
    n_actions = len(FRACTIONS)
    feats: list[np.ndarray] = []
    actions: list[int] = []
    rewards: list[float] = []
    next_feats: list[np.ndarray] = []
    done: list[bool] = []

    for _ in range(config.exploration_episodes):
        start = int(rng.integers(lo, last_start + 1))
        account = new_account(config.initial_cash)
        for t in range(config.episode_length):
            day = start + t
            price = float(series.opens[day])
            rate = total_assets(account, price) / config.initial_cash - 1.0
            phi = state_features(predictions[day], rate, holdings_fraction(account, price))
            a = int(rng.integers(0, n_actions))
            account = apply_order(
                account, realize_fraction(FRACTIONS[a], account, price), price
            )
            next_price = float(series.opens[day + 1])
            next_total = total_assets(account, next_price)
            reward = asset_reward(total_assets(account, price), next_total) / config.initial_cash
            next_rate = next_total / config.initial_cash - 1.0
            phi_next = state_features(
                predictions[day + 1], next_rate, holdings_fraction(account, next_price)
            )
            feats.append(phi)
            actions.append(a)
            rewards.append(reward)
            next_feats.append(phi_next)
            done.append(t == config.episode_length - 1)

    x = np.stack(feats)
    xn = np.stack(next_feats)
    a_idx = np.array(actions)
    r = np.array(rewards)
    terminal = np.array(done)

    params = init_policy(config)
    eye = np.eye(_N_FEATURES)
    for _ in range(config.iterations):
        next_scores = xn @ params.weights.T
        targets = r + config.gamma * np.where(terminal, 0.0, next_scores.max(axis=1))
        new_weights = np.empty_like(params.weights)
        for a in range(n_actions):
            rows = a_idx == a
            xa = x[rows]
            ya = targets[rows]
            gram = xa.T @ xa + config.ridge * eye
            new_weights[a] = np.linalg.solve(gram, xa.T @ ya)
        params.weights = new_weights
    return params


def rollout_greedy(
    params: PolicyParams,
    series: PriceSeries,
    predictions: np.ndarray,
    start: int,
    length: int = 60,
    initial_cash: float = 3_000_000,
) -> float:
    """Cumulative reward (final minus initial assets, marked at the open after
    the last step) of the greedy policy from a given start day."""
    account = new_account(initial_cash)
    for t in range(length):
        day = start + t
        price = float(series.opens[day])
        rate = total_assets(account, price) / initial_cash - 1.0
        context = _bare_context(predictions[day], rate)
        action = policy_action(params, context, account, price)
        account = apply_order(account, action.lots, price)
    return total_assets(account, float(series.opens[start + length])) - initial_cash


def rollout_random(
    series: PriceSeries,
    predictions: np.ndarray,
    start: int,
    seed: int,
    length: int = 60,
    initial_cash: float = 3_000_000,
) -> float:
    """Cumulative reward of the uniform-random policy, for paired comparisons."""
    rng = np.random.default_rng(seed)
    account = new_account(initial_cash)
    for t in range(length):
        day = start + t
        price = float(series.opens[day])
        fraction = FRACTIONS[int(rng.integers(0, len(FRACTIONS)))]
        account = apply_order(account, realize_fraction(fraction, account, price), price)
    return total_assets(account, float(series.opens[start + length])) - initial_cash


def _bare_context(p_vec: np.ndarray, rate: float) -> DecisionContext:
    from .predictor import PredictionDistribution

    return DecisionContext(
        day_index=0,
        p=PredictionDistribution.from_array(p_vec),
        total_rate=rate,
        initial_order=0,
    )


_POLICY_KIND = "policy"


def save_policy(path: str | Path, params: PolicyParams) -> None:
    cfg = params.config
    config = {
        "gamma": cfg.gamma,
        "iterations": cfg.iterations,
        "exploration_episodes": cfg.exploration_episodes,
        "episode_length": cfg.episode_length,
        "ridge": cfg.ridge,
        "initial_cash": cfg.initial_cash,
        "seed": cfg.seed,
    }
    save_weights(path, _POLICY_KIND, config, params.arrays())


def load_policy(path: str | Path) -> PolicyParams:
    config, arrays = load_weights(path, _POLICY_KIND)
    return PolicyParams(config=PolicyConfig(**config), **arrays)
