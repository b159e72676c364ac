"""Shared test construction helpers: hand-built series, candidates with
controlled features, and analytically crafted models with known behavior."""

from __future__ import annotations

import datetime as dt

import numpy as np

from xselector.explanations import DayCandidates, ExplanationItem, Modality
from xselector.market import CLASS_ORDER, OhlcBar, PriceClass, PriceSeries
from xselector.predictor import PredictorConfig, PredictorParams, feature_length
from xselector.user_model import UserModelConfig, UserModelParams, init_user_model


def make_series(
    closes,
    opens=None,
    highs=None,
    lows=None,
    volumes=None,
    code="TEST",
    start=dt.date(2023, 1, 2),
) -> PriceSeries:
    """Bar-per-value series; defaults keep open=close and a tight envelope."""
    closes = list(closes)
    opens = list(opens) if opens is not None else closes
    bars = []
    date = start
    for i, close in enumerate(closes):
        open_ = opens[i]
        high = highs[i] if highs is not None else max(open_, close)
        low = lows[i] if lows is not None else min(open_, close)
        volume = volumes[i] if volumes is not None else 1000
        bars.append(
            OhlcBar(date=date, open=float(open_), high=float(high), low=float(low),
                    close=float(close), volume=int(volume))
        )
        date = date + dt.timedelta(days=1)
    return PriceSeries(code=code, bars=tuple(bars))


# Canonical 9-candidate layout: positions 0-2 saliency BULL/NEUTRAL/BEAR,
# positions 3-8 text BULL x2, NEUTRAL x2, BEAR x2.
CANONICAL_CLASSES = (
    PriceClass.BULL, PriceClass.NEUTRAL, PriceClass.BEAR,
    PriceClass.BULL, PriceClass.BULL,
    PriceClass.NEUTRAL, PriceClass.NEUTRAL,
    PriceClass.BEAR, PriceClass.BEAR,
)
CANONICAL_MODALITIES = (
    Modality.SALIENCY, Modality.SALIENCY, Modality.SALIENCY,
    Modality.TEXT, Modality.TEXT, Modality.TEXT,
    Modality.TEXT, Modality.TEXT, Modality.TEXT,
)


def onehot_candidates(day: int, feature_dim: int = 64) -> DayCandidates:
    """Nine canonical candidates whose features are one-hot at their position,
    identical across days; lets tests dial in exact per-item contributions."""
    items = []
    for k in range(9):
        feature = np.zeros(feature_dim)
        feature[k] = 1.0
        items.append(
            ExplanationItem(
                id=f"d{day}-k{k}",
                day=day,
                price_class=CANONICAL_CLASSES[k],
                modality=CANONICAL_MODALITIES[k],
                payload=f"synthetic item {k}" if CANONICAL_MODALITIES[k] is Modality.TEXT else "",
                feature=feature,
            )
        )
    return DayCandidates(day=day, items=tuple(items))


def onehot_manifest(days, feature_dim: int = 64) -> dict[int, DayCandidates]:
    return {day: onehot_candidates(day, feature_dim) for day in days}


def craft_subset_sum_model(
    candidates: DayCandidates,
    values,
    embed_dim: int = 8,
    n_days: int = 60,
    max_lots: int = 30,
    eps: float = 1e-4,
) -> UserModelParams:
    """User model whose predicted delta is (almost exactly) the sum of the
    flagged items' assigned values, independent of context.

    Projection rows are solved so that row0 of each modality projection maps
    item j's feature to values[j]; class gates are 1 in component 0; the head
    passes the component through its two tanh layers in the linear regime and
    rescales, so the approximation error is O(eps^2) relative.
    """
    values = np.asarray(values, dtype=float)
    feature_dim = candidates.items[0].feature.shape[0]
    config = UserModelConfig(
        embed_dim=embed_dim, feature_dim=feature_dim, n_days=n_days,
        max_lots=max_lots, head="regression", seed=0,
    )
    params = init_user_model(config)
    for arr in params.arrays().values():
        arr[...] = 0.0
    params.class_embed[:, 0] = 1.0

    for modality, w in ((Modality.TEXT, params.w_text), (Modality.SALIENCY, params.w_sal)):
        idx = [j for j, it in enumerate(candidates.items) if it.modality is modality]
        if not idx:
            continue
        feats = np.stack([candidates.items[j].feature for j in idx])
        sol, *_ = np.linalg.lstsq(feats, values[idx], rcond=None)
        w[0] = sol

    e = embed_dim
    params.h1[0, 4 * e] = eps  # h_saliency component 0
    params.h1[0, 5 * e] = eps  # h_text component 0
    params.h2[0, 0] = 1.0
    params.h3[0, 0] = 1.0 / eps
    return params


def gap_reading_predictor(window: int = 30) -> PredictorParams:
    """Surrogate params that classify purely from the opening-gap feature:
    BULL for a clearly positive gap, BEAR for negative, NEUTRAL near zero."""
    config = PredictorConfig(window=window, hidden=4, seed=0)
    n = feature_length(window)
    params = PredictorParams(
        config=config,
        w1=np.zeros((config.hidden, n)),
        b1=np.zeros(config.hidden),
        w2=np.zeros((3, config.hidden)),
        b2=np.zeros(3),
    )
    params.w1[0, n - 1] = 50.0  # opening gap is the last feature
    params.w2[0, 0] = 10.0      # BULL logit follows tanh(50 * gap)
    params.w2[2, 0] = -10.0     # BEAR logit opposes it
    params.b2[1] = 0.5          # NEUTRAL wins when the gap is tiny
    return params
