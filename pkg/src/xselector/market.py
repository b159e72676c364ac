"""Daily OHLC market data and the cash/share mechanics of the trading simulator.

Prices are in JPY, stocks trade in whole lots (100 shares by default), and
accounts never go short or borrow. All operations are pure: they validate,
then return new values.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

DEFAULT_LOT_SIZE = 100
DEFAULT_INITIAL_CASH = 3_000_000
LABEL_HORIZON = 5
LABEL_THRESHOLD = 0.02


class MarketDataError(ValueError):
    """Malformed or internally inconsistent market data."""


class OrderRejected(ValueError):
    """Order would violate account feasibility (overdraft or oversell)."""


class PriceClass(Enum):
    BULL = "BULL"
    NEUTRAL = "NEUTRAL"
    BEAR = "BEAR"


# Canonical class order used for probability vectors and argmax tie-breaking.
CLASS_ORDER = (PriceClass.BULL, PriceClass.NEUTRAL, PriceClass.BEAR)
CLASS_INDEX = {c: i for i, c in enumerate(CLASS_ORDER)}
# Directional value of each class, used for expected-move sign checks.
CLASS_SIGN = {PriceClass.BULL: 1, PriceClass.NEUTRAL: 0, PriceClass.BEAR: -1}


@dataclass(frozen=True)
class OhlcBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: int

    def __post_init__(self) -> None:
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise MarketDataError(f"{self.date}: prices must be positive")
        if self.low > min(self.open, self.close):
            raise MarketDataError(f"{self.date}: low above open/close")
        if self.high < max(self.open, self.close):
            raise MarketDataError(f"{self.date}: high below open/close")
        if self.volume < 0:
            raise MarketDataError(f"{self.date}: negative volume")


@dataclass(frozen=True)
class PriceSeries:
    """Ordered daily bars for one instrument."""

    code: str
    bars: tuple[OhlcBar, ...]

    def __post_init__(self) -> None:
        if not self.bars:
            raise MarketDataError("empty series")
        for prev, cur in zip(self.bars, self.bars[1:]):
            if cur.date <= prev.date:
                raise MarketDataError(
                    f"dates not strictly increasing at {cur.date} (after {prev.date})"
                )

    def __len__(self) -> int:
        return len(self.bars)

    @cached_property
    def opens(self) -> np.ndarray:
        return np.array([b.open for b in self.bars], dtype=float)

    @cached_property
    def highs(self) -> np.ndarray:
        return np.array([b.high for b in self.bars], dtype=float)

    @cached_property
    def lows(self) -> np.ndarray:
        return np.array([b.low for b in self.bars], dtype=float)

    @cached_property
    def closes(self) -> np.ndarray:
        return np.array([b.close for b in self.bars], dtype=float)

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.array([b.volume for b in self.bars], dtype=float)

    def scaled(self, factor: float) -> "PriceSeries":
        """Uniformly scale all prices; used for scale-invariance checks."""
        return PriceSeries(
            code=self.code,
            bars=tuple(
                replace(
                    b,
                    open=b.open * factor,
                    high=b.high * factor,
                    low=b.low * factor,
                    close=b.close * factor,
                )
                for b in self.bars
            ),
        )


@dataclass(frozen=True)
class Account:
    """Cash plus a whole number of share lots. Never negative, never short."""

    cash: float
    shares: int
    lot_size: int = DEFAULT_LOT_SIZE

    def __post_init__(self) -> None:
        if self.cash < 0:
            raise MarketDataError("negative cash")
        if self.shares < 0:
            raise MarketDataError("negative shares")
        if self.lot_size <= 0:
            raise MarketDataError("lot size must be positive")
        if self.shares % self.lot_size != 0:
            raise MarketDataError(
                f"shares {self.shares} not a multiple of lot size {self.lot_size}"
            )

    @property
    def lots(self) -> int:
        return self.shares // self.lot_size


def new_account(cash: float = DEFAULT_INITIAL_CASH, lot_size: int = DEFAULT_LOT_SIZE) -> Account:
    return Account(cash=cash, shares=0, lot_size=lot_size)


CSV_HEADER = ["date", "open", "high", "low", "close", "volume"]


def load_price_csv(path: str | Path, code: str | None = None) -> PriceSeries:
    """Load a daily price series from CSV with header date,open,high,low,close,volume.

    Dates are ISO-8601 and must be strictly increasing. Raises MarketDataError
    naming the offending line on any malformed row.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MarketDataError(f"{path}: empty series") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise MarketDataError(f"{path}: expected header {','.join(CSV_HEADER)}")
        bars = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise MarketDataError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
            try:
                bar = OhlcBar(
                    date=dt.date.fromisoformat(row[0].strip()),
                    open=float(row[1]),
                    high=float(row[2]),
                    low=float(row[3]),
                    close=float(row[4]),
                    volume=int(float(row[5])),
                )
            except MarketDataError as exc:
                raise MarketDataError(f"{path}:{lineno}: {exc}") from None
            except ValueError as exc:
                raise MarketDataError(f"{path}:{lineno}: {exc}") from None
            bars.append(bar)
    if not bars:
        raise MarketDataError(f"{path}: empty series")
    return PriceSeries(code=code or path.stem, bars=tuple(bars))


def write_price_csv(path: str | Path, series: PriceSeries) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for b in series.bars:
            writer.writerow([b.date.isoformat(), b.open, b.high, b.low, b.close, b.volume])


def forward_ratio(
    series: PriceSeries, day: int, horizon: int = LABEL_HORIZON
) -> float:
    """Ratio of the mean close over the next `horizon` days to the day's open, minus 1."""
    if day < 0 or day + horizon >= len(series):
        raise IndexError(f"day {day} needs {horizon} future bars in series of {len(series)}")
    future = series.closes[day + 1 : day + 1 + horizon]
    return float(np.mean(future) / series.opens[day] - 1.0)


def forward_label(
    series: PriceSeries,
    day: int,
    horizon: int = LABEL_HORIZON,
    threshold: float = LABEL_THRESHOLD,
) -> PriceClass:
    """Classify the forward price move: BULL above +threshold, BEAR below -threshold.

    Boundary ratios of exactly +/-threshold count as NEUTRAL.
    """
    rho = forward_ratio(series, day, horizon)
    if rho > threshold:
        return PriceClass.BULL
    if rho < -threshold:
        return PriceClass.BEAR
    return PriceClass.NEUTRAL


def buy_capacity(account: Account, price: float) -> int:
    """Largest number of lots the account can buy at `price`."""
    if price <= 0:
        raise MarketDataError("price must be positive")
    return int(account.cash // (account.lot_size * price))


def sell_capacity(account: Account) -> int:
    """Number of lots the account can sell."""
    return account.lots


def apply_order(account: Account, order: int, price: float) -> Account:
    """Execute a signed lot order at `price` and return the resulting account.

    Positive orders buy, negative sell, zero holds. Rejects orders that would
    overdraw cash or sell more lots than held; a rejected order changes nothing.
    """
    if not isinstance(order, (int, np.integer)):
        raise OrderRejected(f"orders are whole lots, got {order!r}")
    if price <= 0:
        raise MarketDataError("price must be positive")
    order = int(order)
    if order == 0:
        return account
    if order > 0 and order > buy_capacity(account, price):
        raise OrderRejected(
            f"buy {order} lots at {price} needs {order * account.lot_size * price} "
            f"JPY but only {account.cash} available"
        )
    if order < 0 and -order > sell_capacity(account):
        raise OrderRejected(f"sell {-order} lots but only {account.lots} held")
    return Account(
        cash=account.cash - order * account.lot_size * price,
        shares=account.shares + order * account.lot_size,
        lot_size=account.lot_size,
    )


def total_assets(account: Account, price: float) -> float:
    """Mark-to-market value: cash plus shares at `price`."""
    if price <= 0:
        raise MarketDataError("price must be positive")
    return account.cash + account.shares * price


def final_liquidation(account: Account, series: PriceSeries, last_day: int) -> float:
    """Convert held shares to cash at the mean close of the 5 days after `last_day`."""
    if last_day + 5 >= len(series):
        raise IndexError(f"day {last_day} needs 5 future bars in series of {len(series)}")
    settle = float(np.mean(series.closes[last_day + 1 : last_day + 6]))
    return account.cash + account.shares * settle


def feasible_order_range(account: Account, price: float) -> tuple[int, int]:
    """Inclusive (min, max) feasible signed lot order at `price`."""
    return (-sell_capacity(account), buy_capacity(account, price))
