from __future__ import annotations

import numpy as np
import pytest

from helpers import make_series
from xselector.market import (
    Account,
    MarketDataError,
    OrderRejected,
    PriceClass,
    apply_order,
    buy_capacity,
    feasible_order_range,
    final_liquidation,
    forward_label,
    forward_ratio,
    load_price_csv,
    new_account,
    sell_capacity,
    total_assets,
    write_price_csv,
)

GOOD_CSV = """date,open,high,low,close,volume
2023-01-02,100,105,99,104,1000
2023-01-03,104,106,100,101,1200
2023-01-04,101,103,98,99,900
"""


class TestLoadCsv:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text(GOOD_CSV)
        series = load_price_csv(path, code="T")
        assert len(series) == 3
        assert series.bars[0].open == 100
        assert series.bars[2].close == 99

    def test_high_below_low_names_row(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text(
            "date,open,high,low,close,volume\n"
            "2023-01-02,100,105,99,104,1000\n"
            "2023-01-03,104,100,106,104,1000\n"
        )
        with pytest.raises(MarketDataError, match=":3:"):
            load_price_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("")
        with pytest.raises(MarketDataError, match="empty series"):
            load_price_csv(path)

    def test_header_only(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("date,open,high,low,close,volume\n")
        with pytest.raises(MarketDataError, match="empty series"):
            load_price_csv(path)

    def test_non_increasing_dates(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text(
            "date,open,high,low,close,volume\n"
            "2023-01-03,100,105,99,104,1000\n"
            "2023-01-03,104,106,100,101,1000\n"
        )
        with pytest.raises(MarketDataError, match="strictly increasing"):
            load_price_csv(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("date,open,close\n2023-01-02,1,1\n")
        with pytest.raises(MarketDataError, match="expected header"):
            load_price_csv(path)

    def test_malformed_number_names_line(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text(
            "date,open,high,low,close,volume\n2023-01-02,abc,105,99,104,1000\n"
        )
        with pytest.raises(MarketDataError, match=":2:"):
            load_price_csv(path)

    def test_round_trip(self, tmp_path, synthetic_series):
        path = tmp_path / "prices.csv"
        write_price_csv(path, synthetic_series)
        again = load_price_csv(path, code=synthetic_series.code)
        assert len(again) == len(synthetic_series)
        assert np.array_equal(again.closes, synthetic_series.closes)
        assert again.bars[0].date == synthetic_series.bars[0].date


class TestForwardLabel:
    def test_bull(self):
        series = make_series([1000] + [1030] * 6, opens=[1000] * 7)
        assert forward_label(series, 0) is PriceClass.BULL

    def test_neutral(self):
        series = make_series([1000] * 7)
        assert forward_label(series, 0) is PriceClass.NEUTRAL

    def test_bear(self):
        series = make_series([1000] + [975] * 6, opens=[1000] * 7)
        assert forward_label(series, 0) is PriceClass.BEAR

    def test_boundary_is_neutral(self):
        # 1250/1000 - 1 = 0.25 exactly in binary, so the comparison really is
        # ratio == threshold; the strict inequalities must yield NEUTRAL.
        series = make_series([1000] + [1250] * 6, opens=[1000] * 7)
        assert forward_ratio(series, 0) == 0.25
        assert forward_label(series, 0, threshold=0.25) is PriceClass.NEUTRAL
        series = make_series([1000] + [750] * 6, opens=[1000] * 7)
        assert forward_ratio(series, 0) == -0.25
        assert forward_label(series, 0, threshold=0.25) is PriceClass.NEUTRAL

    def test_insufficient_future(self):
        series = make_series([1000] * 5)
        with pytest.raises(IndexError):
            forward_label(series, 0)

    def test_scale_invariance(self, synthetic_series):
        scaled = synthetic_series.scaled(10.0)
        for day in range(30, 90):
            assert forward_label(synthetic_series, day) is forward_label(scaled, day)

    def test_partition(self, synthetic_series):
        seen = set()
        for day in range(0, len(synthetic_series) - 6):
            seen.add(forward_label(synthetic_series, day))
        assert seen <= {PriceClass.BULL, PriceClass.NEUTRAL, PriceClass.BEAR}


class TestAccount:
    def test_buy_one_lot(self):
        account = new_account(3_000_000)
        after = apply_order(account, 1, 2000.0)
        assert after.cash == 2_800_000
        assert after.shares == 100

    def test_order_zero_is_identity(self):
        account = Account(cash=123_456.0, shares=300)
        assert apply_order(account, 0, 999.0) == account

    def test_insufficient_cash_rejected(self):
        account = new_account(100_000)
        with pytest.raises(OrderRejected, match="buy"):
            apply_order(account, 1, 2000.0)

    def test_oversell_rejected(self):
        account = Account(cash=0.0, shares=100)
        with pytest.raises(OrderRejected, match="sell"):
            apply_order(account, -2, 1000.0)

    def test_fractional_order_rejected(self):
        with pytest.raises(OrderRejected, match="whole lots"):
            apply_order(new_account(), 1.5, 1000.0)  # type: ignore[arg-type]

    def test_invariants_reject_bad_accounts(self):
        with pytest.raises(MarketDataError):
            Account(cash=-1.0, shares=0)
        with pytest.raises(MarketDataError):
            Account(cash=0.0, shares=50)  # not a lot multiple

    def test_conservation_and_nonnegativity_random_orders(self, rng):
        # Integer prices keep the arithmetic exact, so conservation is ==.
        for _ in range(200):
            account = new_account(3_000_000)
            for _ in range(30):
                price = float(rng.integers(500, 3000))
                lo, hi = feasible_order_range(account, price)
                order = int(rng.integers(lo - 2, hi + 3))
                before = total_assets(account, price)
                try:
                    account = apply_order(account, order, price)
                except OrderRejected:
                    assert order < lo or order > hi
                    continue
                assert lo <= order <= hi
                assert total_assets(account, price) == before
                assert account.cash >= 0
                assert account.shares >= 0
                assert account.shares % account.lot_size == 0


class TestValuation:
    def test_total_assets(self):
        assert total_assets(Account(cash=2_800_000.0, shares=100), 2100.0) == 3_010_000

    def test_total_assets_no_shares(self):
        assert total_assets(Account(cash=5000.0, shares=0), 1234.0) == 5000

    def test_total_assets_no_cash(self):
        assert total_assets(Account(cash=0.0, shares=100), 1500.0) == 150_000

    def test_liquidation_no_shares(self):
        series = make_series([10] * 10)
        assert final_liquidation(Account(cash=777.0, shares=0), series, 2) == 777

    def test_liquidation_flat(self):
        series = make_series([10] * 10)
        assert final_liquidation(Account(cash=0.0, shares=100), series, 2) == 1000

    def test_liquidation_hand_mean(self):
        series = make_series([10, 10, 10, 20, 30, 40, 50, 10], opens=[10] * 8)
        # settles at mean(10, 20, 30, 40, 50) = 30
        assert final_liquidation(Account(cash=5.0, shares=100), series, 2) == 3005

    def test_liquidation_needs_tail(self):
        series = make_series([10] * 6)
        with pytest.raises(IndexError):
            final_liquidation(Account(cash=0.0, shares=100), series, 2)


class TestCapacity:
    def test_buy_capacity(self):
        assert buy_capacity(new_account(3_000_000), 2000.0) == 15

    def test_sell_capacity(self):
        assert sell_capacity(Account(cash=0.0, shares=700)) == 7

    def test_feasible_range(self):
        account = Account(cash=450_000.0, shares=200)
        assert feasible_order_range(account, 1000.0) == (-2, 4)
