"""Feature-based surrogate price predictor and its evaluation metrics.

Plays the role of the chart-reading model in the decision-support loop: for
each day it emits a 3-class probability distribution over the forward price
move (BULL/NEUTRAL/BEAR at +/-2% of the day's open versus the 5-day forward
average). The surrogate is a small tanh MLP over engineered window features;
externally computed per-day distributions can be loaded from CSV instead.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .market import (
    CLASS_ORDER,
    LABEL_HORIZON,
    LABEL_THRESHOLD,
    PriceClass,
    PriceSeries,
    forward_label,
    forward_ratio,
)
from .weights_io import load_weights, save_weights

FEATURE_WINDOW = 30
MA_SPANS = (5, 10, 20)


class TrainingError(RuntimeError):
    """Training failed to meet its contract."""


@dataclass(frozen=True)
class PredictionDistribution:
    """3-class probability vector over (BULL, NEUTRAL, BEAR)."""

    p_bull: float
    p_neutral: float
    p_bear: float

    def __post_init__(self) -> None:
        vec = (self.p_bull, self.p_neutral, self.p_bear)
        if any(not 0.0 <= v <= 1.0 for v in vec):
            raise ValueError(f"probabilities out of [0,1]: {vec}")
        if abs(sum(vec) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {sum(vec)}, expected 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_bull, self.p_neutral, self.p_bear])

    @classmethod
    def from_array(cls, arr) -> "PredictionDistribution":
        b, n, r = (float(v) for v in arr)
        return cls(p_bull=b, p_neutral=n, p_bear=r)

    @classmethod
    def uniform(cls) -> "PredictionDistribution":
        return cls(p_bull=1 / 3, p_neutral=1 / 3, p_bear=1 / 3)

    def argmax_class(self) -> PriceClass:
        # Ties resolve in BULL, NEUTRAL, BEAR priority by array order.
        return CLASS_ORDER[int(np.argmax(self.as_array()))]

    def expected_sign_value(self) -> float:
        """Expected move with class values +1 / 0 / -1."""
        return self.p_bull - self.p_bear


def feature_length(window: int = FEATURE_WINDOW) -> int:
    return 3 * window + 3


def featurize(series: PriceSeries, day: int, window: int = FEATURE_WINDOW) -> np.ndarray:
    """Engineered features over the `window` bars before `day` plus the day's open.

    All entries are ratios or log returns, so the vector is invariant under
    uniform price scaling of the series. Layout:
      [0, W-1)        log close-to-close returns
      [W-1, 2W-1)     per-bar range ratios (high-low)/close
      [2W-1, 3W-2)    log volume changes (with +1 smoothing)
      [3W-2, 3W+2)    close vs moving-average gaps for spans (5, 10, 20, W)
      [3W+2]          opening gap: day's open vs previous close
    """
    if day < window:
        raise IndexError(f"day {day} needs {window} bars of history")
    if day >= len(series):
        raise IndexError(f"day {day} out of range for series of {len(series)}")
    closes = series.closes[day - window : day]
    highs = series.highs[day - window : day]
    lows = series.lows[day - window : day]
    volumes = series.volumes[day - window : day]

    log_returns = np.diff(np.log(closes))
    range_ratios = (highs - lows) / closes
    volume_changes = np.diff(np.log(volumes + 1.0))
    ma_gaps = np.array(
        [closes[-1] / closes[-span:].mean() - 1.0 for span in (*MA_SPANS, window)]
    )
    opening_gap = np.array([series.opens[day] / closes[-1] - 1.0])
    return np.concatenate([log_returns, range_ratios, volume_changes, ma_gaps, opening_gap])


@dataclass
class PredictorConfig:
    window: int = FEATURE_WINDOW
    hidden: int = 16
    learning_rate: float = 0.1
    momentum: float = 0.9
    epochs: int = 300
    seed: int = 0


@dataclass
class PredictorParams:
    """Weights of the 1-hidden-layer tanh classifier, with input standardization."""

    config: PredictorConfig
    w1: np.ndarray  # (hidden, n_features)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (3, hidden)
    b2: np.ndarray  # (3,)
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if self.mu.size == 0:
            self.mu = np.zeros(self.w1.shape[1])
        if self.sigma.size == 0:
            self.sigma = np.ones(self.w1.shape[1])

    @property
    def n_features(self) -> int:
        return self.w1.shape[1]


def init_predictor(n_features: int, config: PredictorConfig | None = None) -> PredictorParams:
    config = config or PredictorConfig()
    rng = np.random.default_rng(config.seed)
    limit1 = 1.0 / np.sqrt(n_features)
    limit2 = 1.0 / np.sqrt(config.hidden)
    return PredictorParams(
        config=config,
        w1=rng.uniform(-limit1, limit1, size=(config.hidden, n_features)),
        b1=np.zeros(config.hidden),
        w2=rng.uniform(-limit2, limit2, size=(3, config.hidden)),
        b2=np.zeros(3),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _forward_batch(params: PredictorParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = (x - params.mu) / params.sigma
    hidden = np.tanh(z @ params.w1.T + params.b1)
    logits = hidden @ params.w2.T + params.b2
    return z, hidden, logits


def predict_proba(params: PredictorParams, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape != (params.n_features,):
        raise ValueError(f"expected {params.n_features} features, got shape {features.shape}")
    _, _, logits = _forward_batch(params, features[None, :])
    return _softmax(logits)[0]

def predict(params: PredictorParams, features: np.ndarray) -> PredictionDistribution:
    return PredictionDistribution.from_array(predict_proba(params, features))


def _to_arrays(dataset: Sequence[tuple[np.ndarray, PriceClass]]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([np.asarray(f, dtype=float) for f, _ in dataset])
    y = np.array([CLASS_ORDER.index(label) for _, label in dataset], dtype=int)
    return x, y


def loss_and_grads(
    params: PredictorParams, x: np.ndarray, y: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and its analytic gradients for a labeled batch."""
    n = x.shape[0]
    z, hidden, logits = _forward_batch(params, x)
    probs = _softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dw2 = dlogits.T @ hidden
    db2 = dlogits.sum(axis=0)
    dhidden = dlogits @ params.w2
    dpre = dhidden * (1.0 - hidden**2)
    dw1 = dpre.T @ z
    db1 = dpre.sum(axis=0)
    return loss, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def train_predictor(
    dataset: Sequence[tuple[np.ndarray, PriceClass]],
    config: PredictorConfig | None = None,
) -> PredictorParams:
    """Fit the surrogate classifier by full-batch gradient descent with momentum.

    Deterministic for a fixed seed. The final training cross-entropy must not
    exceed that of the uniform predictor (ln 3); a single-class dataset only
    earns a warning since the model then just learns the constant.
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    config = config or PredictorConfig()
    x, y = _to_arrays(dataset)
    if np.unique(y).size < 2:
        warnings.warn("training labels contain a single class; model will be constant-ish")

    params = init_predictor(x.shape[1], config)
    params.mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    params.sigma = np.where(sigma < 1e-12, 1.0, sigma)

    velocity = {name: np.zeros_like(getattr(params, name)) for name in ("w1", "b1", "w2", "b2")}
    for _ in range(config.epochs):
        _, grads = loss_and_grads(params, x, y)
        for name, grad in grads.items():
            velocity[name] = config.momentum * velocity[name] - config.learning_rate * grad
            setattr(params, name, getattr(params, name) + velocity[name])

    final_loss, _ = loss_and_grads(params, x, y)
    if final_loss > np.log(3.0) + 1e-9:
        raise TrainingError(
            f"training cross-entropy {final_loss:.4f} worse than the uniform predictor"
        )
    return params


def three_class_accuracy(
    params: PredictorParams, eval_set: Sequence[tuple[np.ndarray, PriceClass]]
) -> float:
    """Fraction of examples whose argmax class matches the true class."""
    if len(eval_set) == 0:
        raise ValueError("empty evaluation set")
    x, y = _to_arrays(eval_set)
    _, _, logits = _forward_batch(params, x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def binary_sign_accuracy(
    params: PredictorParams, eval_set: Sequence[tuple[np.ndarray, float]]
) -> float:
    """Matching rate between the sign of the predicted expected move and the
    sign of the actual forward ratio; zero signs on either side are excluded."""
    if len(eval_set) == 0:
        raise ValueError("empty evaluation set")
    x = np.stack([np.asarray(f, dtype=float) for f, _ in eval_set])
    rho = np.array([r for _, r in eval_set], dtype=float)
    _, _, logits = _forward_batch(params, x)
    probs = _softmax(logits)
    expected = probs[:, 0] - probs[:, 2]
    keep = (np.sign(expected) != 0) & (np.sign(rho) != 0)
    if not np.any(keep):
        raise ValueError("no examples with nonzero signs on both sides")
    return float(np.mean(np.sign(expected[keep]) == np.sign(rho[keep])))


def per_day_correct(
    params: PredictorParams,
    series: PriceSeries,
    horizon: int = LABEL_HORIZON,
    threshold: float = LABEL_THRESHOLD,
) -> tuple[int, np.ndarray]:
    """Per-day correctness of the predictor over every labelable day.

    Returns (first_day, flags) where flags[k] is 1.0 if the argmax prediction
    for day first_day + k matches the forward label.
    """
    window = params.config.window
    first = window
    last = len(series) - horizon - 1  # inclusive
    if last < first:
        raise ValueError("series too short to label any day")
    flags = np.empty(last - first + 1)
    for k, day in enumerate(range(first, last + 1)):
        probs = predict_proba(params, featurize(series, day, window))
        predicted = CLASS_ORDER[int(np.argmax(probs))]
        actual = forward_label(series, day, horizon, threshold)
        flags[k] = 1.0 if predicted is actual else 0.0
    return first, flags


@dataclass(frozen=True)
class ScenarioWindows:
    """High- and low-accuracy evaluation windows, chosen by moving-average accuracy."""

    window: int
    high_start: int
    high_accuracy: float
    low_start: int
    low_accuracy: float

    def high_days(self) -> range:
        return range(self.high_start, self.high_start + self.window)

    def low_days(self) -> range:
        return range(self.low_start, self.low_start + self.window)


def window_accuracies(correct: np.ndarray, window: int) -> np.ndarray:
    """Moving-average accuracy of every full window over a correctness array."""
    if correct.shape[0] < window:
        raise ValueError(f"need at least {window} labeled days, have {correct.shape[0]}")
    cumulative = np.concatenate([[0.0], np.cumsum(correct)])
    return (cumulative[window:] - cumulative[:-window]) / window


def select_scenarios(
    params: PredictorParams,
    series: PriceSeries,
    window: int = 60,
    horizon: int = LABEL_HORIZON,
    threshold: float = LABEL_THRESHOLD,
) -> ScenarioWindows:
    """Pick the high-accuracy window (maximum moving-average accuracy) and a
    non-overlapping low-accuracy window (accuracy closest to chance, 1/3).

    Ties break toward the earliest window in both cases.
    """
    first, correct = per_day_correct(params, series, horizon, threshold)
    accuracies = window_accuracies(correct, window)
    high_idx = int(np.argmax(accuracies))

    candidates = np.abs(accuracies - 1.0 / 3.0)
    starts = np.arange(accuracies.shape[0])
    non_overlapping = np.abs(starts - high_idx) >= window
    if not np.any(non_overlapping):
        raise ValueError("series too short for two non-overlapping scenario windows")
    candidates[~non_overlapping] = np.inf
    low_idx = int(np.argmin(candidates))

    return ScenarioWindows(
        window=window,
        high_start=first + high_idx,
        high_accuracy=float(accuracies[high_idx]),
        low_start=first + low_idx,
        low_accuracy=float(accuracies[low_idx]),
    )


def predictions_for_series(
    params: PredictorParams, series: PriceSeries
) -> np.ndarray:
    """Per-day probability rows for every featurizable day; NaN rows elsewhere."""
    window = params.config.window
    out = np.full((len(series), 3), np.nan)
    for day in range(window, len(series)):
        out[day] = predict_proba(params, featurize(series, day, window))
    return out


def load_predictions_csv(path: str | Path, series: PriceSeries) -> np.ndarray:
    """Load precomputed per-day distributions (date,p_bull,p_neutral,p_bear)
    aligned to the series by date; NaN rows for uncovered days."""
    by_date: dict[dt.date, np.ndarray] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"date", "p_bull", "p_neutral", "p_bear"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise ValueError(f"{path}: expected header date,p_bull,p_neutral,p_bear")
        for row in reader:
            probs = np.array(
                [float(row["p_bull"]), float(row["p_neutral"]), float(row["p_bear"])]
            )
            PredictionDistribution.from_array(probs)  # validates
            by_date[dt.date.fromisoformat(row["date"])] = probs
    out = np.full((len(series), 3), np.nan)
    for day, bar in enumerate(series.bars):
        if bar.date in by_date:
            out[day] = by_date[bar.date]
    return out


_PREDICTOR_KIND = "predictor"


def save_predictor(path: str | Path, params: PredictorParams) -> None:
    config = {
        "window": params.config.window,
        "hidden": params.config.hidden,
        "learning_rate": params.config.learning_rate,
        "momentum": params.config.momentum,
        "epochs": params.config.epochs,
        "seed": params.config.seed,
    }
    save_weights(
        path,
        _PREDICTOR_KIND,
        config,
        {"w1": params.w1, "b1": params.b1, "w2": params.w2, "b2": params.b2,
         "mu": params.mu, "sigma": params.sigma},
    )


def load_predictor(path: str | Path) -> PredictorParams:
    config, arrays = load_weights(path, _PREDICTOR_KIND)
    return PredictorParams(config=PredictorConfig(**config), **arrays)
