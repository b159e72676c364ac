"""Synthetic market data and explanation assets for experiments and demos.

Price series come from a regime-switching daily-return process (persistent
up/flat/down drift states plus noise) so that windowed momentum features carry
real signal for the surrogate predictor. Prices are integer JPY. Explanation
manifests pair template-generated sentences with procedurally drawn saliency
images, two sentences and one image per class per day.
"""

from __future__ import annotations

import datetime as dt
import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

from .explanations import (
    FEATURE_DIM,
    DayCandidates,
    load_manifest,
)
from .market import CLASS_ORDER, OhlcBar, PriceClass, PriceSeries

REGIME_DRIFTS = (-0.007, 0.0, 0.007)
REGIME_STAY_PROB = 0.9
RETURN_NOISE = 0.008


def _next_weekday(date: dt.date) -> dt.date:
    date = date + dt.timedelta(days=1)
    while date.weekday() >= 5:
        date = date + dt.timedelta(days=1)
    return date


def generate_price_series(
    code: str = "SYN1",
    n_days: int = 400,
    seed: int = 0,
    start_price: float = 2000.0,
    price_floor: float = 1200.0,
    start_date: dt.date = dt.date(2021, 1, 4),
) -> PriceSeries:
    """Regime-switching synthetic daily OHLC bars with integer JPY prices."""
    rng = np.random.default_rng([seed, 11])
    regime = 1  # start flat
    close = start_price
    date = start_date
    bars = []
    for _ in range(n_days):
        if rng.random() > REGIME_STAY_PROB:
            regime = int(rng.integers(0, 3))
        ret = REGIME_DRIFTS[regime] + rng.normal(0.0, RETURN_NOISE)
        prev_close = close
        close = max(price_floor, prev_close * (1.0 + ret))
        open_ = max(price_floor, prev_close * (1.0 + rng.normal(0.0, 0.002)))
        spread = abs(rng.normal(0.0, 0.004)) * prev_close
        high = max(open_, close) + spread
        low = max(price_floor * 0.5, min(open_, close) - spread)
        volume = int(rng.lognormal(10.0, 0.4))
        bars.append(
            OhlcBar(
                date=date,
                open=float(round(open_)),
                high=float(round(high)),
                low=float(round(low)),
                close=float(round(close)),
                volume=volume,
            )
        )
        close = float(round(close))
        date = _next_weekday(date)
    return PriceSeries(code=code, bars=tuple(bars))


def generate_panel(
    codes: Iterable[str] = ("SYN1", "SYN2", "SYN3", "SYN4"),
    n_days: int = 400,
    seed: int = 0,
) -> dict[str, PriceSeries]:
    """One synthetic series per instrument code, independently seeded."""
    return {
        code: generate_price_series(code=code, n_days=n_days, seed=seed + 101 * i)
        for i, code in enumerate(codes)
    }


_SENTENCE_TEMPLATES: dict[PriceClass, tuple[str, str]] = {
    PriceClass.BULL: (
        "Buying pressure has built up over the last week and the close held above "
        "the 20-day average near {ma20} JPY, which points to further gains.",
        "Higher lows around {close} JPY with steady volume form a setup that often "
        "precedes a move beyond +2% of the open.",
    ),
    PriceClass.NEUTRAL: (
        "Recent candles stay inside a narrow band around {close} JPY, so the coming "
        "days should average out close to the open.",
        "Up and down sessions have roughly balanced near {ma20} JPY; no clear drift "
        "shows in the 20-day trend.",
    ),
    PriceClass.BEAR: (
        "Sellers pushed the close toward {close} JPY under the 20-day average, and "
        "fading volume suggests a slide past -2% of the open.",
        "Lower highs pressing against {ma20} JPY point to continued downward "
        "pressure over the next sessions.",
    ),
}

_BLOB_CENTERS = {PriceClass.BULL: (0.25, 0.7), PriceClass.NEUTRAL: (0.5, 0.5), PriceClass.BEAR: (0.75, 0.3)}


def render_saliency_image(
    price_class: PriceClass, day: int, seed: int, size: int = 64
) -> np.ndarray:
    """Procedural grayscale saliency heat map: a class-positioned bright blob
    over mild seeded noise. Values in [0, 255] uint8."""
    rng = np.random.default_rng([seed, day, CLASS_ORDER.index(price_class), 7])
    cy, cx = _BLOB_CENTERS[price_class]
    cy = cy * size + rng.normal(0.0, size * 0.03)
    cx = cx * size + rng.normal(0.0, size * 0.03)
    yy, xx = np.mgrid[0:size, 0:size]
    blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * (size * 0.15) ** 2)))
    noise = rng.uniform(0.0, 0.15, size=(size, size))
    img = np.clip(blob + noise, 0.0, 1.0)
    return (img * 255).astype(np.uint8)


def generate_manifest(
    series: PriceSeries,
    days: Iterable[int],
    out_path: str | Path,
    seed: int = 0,
    feature_dim: int = FEATURE_DIM,
    write_images: bool = True,
) -> dict[int, DayCandidates]:
    """Write a manifest (and its saliency PNGs) covering the given days.

    Each day gets one saliency map per class and two template sentences per
    class, so 9 candidates in the canonical arrangement. Returns the loaded
    candidates keyed by day.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    image_dir = out_path.parent / "images"
    entries = []
    for day in days:
        close = float(series.closes[day - 1])
        ma20 = float(series.closes[max(0, day - 20) : day].mean())
        for cls in CLASS_ORDER:
            entry: dict = {
                "id": f"{series.code}-d{day}-sal-{cls.value}",
                "day": int(day),
                "class": cls.value,
                "modality": "saliency",
            }
            image = render_saliency_image(cls, day, seed)
            if write_images:
                image_dir.mkdir(parents=True, exist_ok=True)
                rel = f"images/{series.code}-d{day}-{cls.value}.png"
                Image.fromarray(image, mode="L").save(out_path.parent / rel)
                entry["payload_path"] = rel
            else:
                from .explanations import featurize_saliency

                entry["feature"] = featurize_saliency(image, dim=feature_dim).tolist()
            entries.append(entry)
        for cls in CLASS_ORDER:
            for variant, template in enumerate(_SENTENCE_TEMPLATES[cls]):
                text = template.format(close=round(close), ma20=round(ma20))
                entries.append(
                    {
                        "id": f"{series.code}-d{day}-text-{cls.value}-{variant}",
                        "day": int(day),
                        "class": cls.value,
                        "modality": "text",
                        "text": text,
                    }
                )
    out_path.write_text(json.dumps(entries, indent=1), encoding="utf-8")
    return load_manifest(out_path, feature_dim=feature_dim)


def labeled_dataset(
    series: PriceSeries,
    window: int = 30,
    horizon: int = 5,
    threshold: float = 0.02,
    days: Iterable[int] | None = None,
) -> tuple[list[tuple[np.ndarray, PriceClass]], list[tuple[np.ndarray, float]]]:
    """(features, label) and (features, forward ratio) pairs for every
    labelable day, or for the given days."""
    from .market import forward_label, forward_ratio
    from .predictor import featurize

    if days is None:
        days = range(window, len(series) - horizon - 1 + 1)
    class_set = []
    ratio_set = []
    for day in days:
        feats = featurize(series, day, window)
        class_set.append((feats, forward_label(series, day, horizon, threshold)))
        ratio_set.append((feats, forward_ratio(series, day, horizon)))
    return class_set, ratio_set
