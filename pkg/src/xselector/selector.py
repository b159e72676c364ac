"""Explanation-combination selection: the dynamic selector and fixed baselines.

The dynamic selector scores every combination of the day's candidate
explanations by predicting the user's resulting decision and measuring its
distance to the policy-recommended order, then presents the argmin. Distances
come in two flavors: `expected` compares the predicted final order with the
recommendation in lots; `distributional` is the total-variation distance
between the predicted decision distribution and the target distribution over
the same bins (requires the categorical user-model head).

Baselines: ALL shows every candidate, ARGMAX only those matching the
prediction's most probable class, RANDOM flags each candidate independently
with probability 1/2, ONLY_PRED shows the prediction with no explanations,
and PLAIN gives no support at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .explanations import Combination, DayCandidates, enumerate_combinations
from .market import Account
from .policy import PolicyParams, policy_action
from .user_model import (
    CandidateEncoding,
    DecisionContext,
    DecisionPrediction,
    UserModelParams,
    encode_candidates,
    predict_decision,
)


class StrategyKind(Enum):
    XSELECTOR = "XSELECTOR"
    ALL = "ALL"
    ARGMAX = "ARGMAX"
    RANDOM = "RANDOM"
    ONLY_PRED = "ONLY_PRED"
    PLAIN = "PLAIN"


def decision_distance(
    prediction: DecisionPrediction,
    initial_order: int,
    recommended_order: int,
    mode: str = "expected",
    target_probs: np.ndarray | None = None,
) -> float:
    """Distance between the predicted user decision and the recommended one.

    expected:       |(d' + predicted_delta) - d_AI| in lots.
    distributional: total-variation distance between the predicted delta-bin
                    distribution and the target distribution over the same
                    bins (one-hot at d_AI - d', clipped to the bin range,
                    unless an explicit target is given).
    """
    if mode == "expected":
        return abs(initial_order + prediction.predicted_delta - recommended_order)
    if mode != "distributional":
        raise ValueError(f"unknown distance mode {mode!r}")
    if prediction.probabilities is None:
        raise ValueError("distributional distance needs the categorical head")
    probs = prediction.probabilities
    if target_probs is None:
        values = prediction.bin_values
        target_delta = np.clip(recommended_order - initial_order, values[0], values[-1])
        target_probs = np.zeros_like(probs)
        target_probs[int(np.argmin(np.abs(values - target_delta)))] = 1.0
    elif target_probs.shape != probs.shape:
        raise ValueError("target distribution shape mismatch")
    return 0.5 * float(np.abs(probs - target_probs).sum())


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one exhaustive selection sweep."""

    chosen: Combination
    scores: np.ndarray  # distance per combination, indexed by mask
    chosen_distance: float
    recommended_order: int
    mode: str

    def to_json(self) -> dict:
        return {
            "chosen": self.chosen.to_json(),
            "chosen_distance": self.chosen_distance,
            "recommended_order": self.recommended_order,
            "mode": self.mode,
            "scores": [float(s) for s in self.scores],
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json())


def select_explanations(
    user_model: UserModelParams,
    policy: PolicyParams,
    context: DecisionContext,
    account: Account,
    price: float,
    candidates: DayCandidates,
    mode: str = "expected",
    cap: int = 16,
) -> SelectionResult:
    """Score all 2^n combinations and return the argmin of the decision distance.

    Ties break toward fewer flagged items, then the lower bitmask, so the
    result is deterministic regardless of evaluation order.
    """
    recommended = policy_action(policy, context, account, price).lots
    encoding = encode_candidates(user_model, candidates)
    scores = np.empty(1 << len(candidates))
    best: tuple[float, int, int] | None = None
    best_combo: Combination | None = None
    for combo in enumerate_combinations(candidates, cap=cap):
        prediction = predict_decision(user_model, context, candidates, combo, encoding)
        distance = decision_distance(prediction, context.initial_order, recommended, mode)
        scores[combo.mask] = distance
        key = (distance, combo.count(), combo.mask)
        if best is None or key < best:
            best = key
            best_combo = combo
    assert best is not None and best_combo is not None
    return SelectionResult(
        chosen=best_combo,
        scores=scores,
        chosen_distance=best[0],
        recommended_order=recommended,
        mode=mode,
    )


@dataclass(frozen=True)
class StrategySelection:
    combination: Combination
    show_prediction: bool
    selection: SelectionResult | None = None


def strategy_select(
    kind: StrategyKind,
    context: DecisionContext,
    candidates: DayCandidates,
    seed: int | None = None,
    user_model: UserModelParams | None = None,
    policy: PolicyParams | None = None,
    account: Account | None = None,
    price: float | None = None,
    mode: str = "expected",
) -> StrategySelection:
    """Choose the combination to present under a given strategy.

    RANDOM requires a seed; XSELECTOR additionally requires the user model,
    policy, account, and price. Returns the combination together with whether
    the prediction bar graph is shown at all (hidden only under PLAIN).
    """
    n = len(candidates)
    if kind is StrategyKind.ALL:
        return StrategySelection(Combination.full(n), show_prediction=True)
    if kind is StrategyKind.ARGMAX:
        target = context.p.argmax_class()
        flagged = [j for j, item in enumerate(candidates.items) if item.price_class is target]
        return StrategySelection(Combination.from_indices(flagged, n), show_prediction=True)
    if kind is StrategyKind.RANDOM:
        if seed is None:
            raise ValueError("RANDOM strategy needs a seed")
        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 2, size=n)
        mask = int(sum(int(b) << j for j, b in enumerate(bits)))
        return StrategySelection(Combination(mask=mask, size=n), show_prediction=True)
    if kind is StrategyKind.ONLY_PRED:
        return StrategySelection(Combination.empty(n), show_prediction=True)
    if kind is StrategyKind.PLAIN:
        return StrategySelection(Combination.empty(n), show_prediction=False)
    if kind is StrategyKind.XSELECTOR:
        if user_model is None or policy is None or account is None or price is None:
            raise ValueError("XSELECTOR needs user_model, policy, account, and price")
        result = select_explanations(
            user_model, policy, context, account, price, candidates, mode=mode
        )
        return StrategySelection(result.chosen, show_prediction=True, selection=result)
    raise ValueError(f"unknown strategy {kind!r}")
