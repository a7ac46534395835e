import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdse.backtest import (
    CASH,
    LONG,
    EquityCurve,
    buy_and_hold,
    econ_metrics,
    max_drawdown,
    monthly_returns,
    perfect_signals,
    random_strategy,
    run_signal_strategy,
    write_econ_csv,
    write_equity_csv,
)
from tdse.errors import EmptyCurve, LengthMismatch, SeriesTooShort


def random_path(rng, n=120):
    return 100.0 * np.cumprod(1.0 + rng.normal(0, 0.015, n))


def test_all_up_equals_buy_and_hold_bit_exact(rng):
    for _ in range(20):
        c = random_path(rng)
        a = run_signal_strategy(np.ones(len(c) - 1), c)
        assert np.array_equal(a.values, buy_and_hold(c).values)
        assert a.positions == buy_and_hold(c).positions


def test_all_down_is_flat(rng):
    c = random_path(rng)
    cur = run_signal_strategy(np.zeros(len(c) - 1), c)
    assert np.all(cur.values == 1.0) and set(cur.positions) == {CASH}


def test_perfect_foresight_product_oracle(rng):
    c = random_path(rng, 60)
    final = 1.0
    for t in range(1, len(c)):
        r = c[t] / c[t - 1] - 1
        if r > 0:
            final *= 1 + r
    assert run_signal_strategy(perfect_signals(c), c).final == pytest.approx(final, rel=1e-12)


def test_perfect_foresight_dominates(rng):
    for _ in range(100):
        c = random_path(rng, 40)
        best = run_signal_strategy(perfect_signals(c), c).final
        assert best >= buy_and_hold(c).final - 1e-12
        for _ in range(5):
            assert best >= run_signal_strategy(rng.integers(0, 2, len(c) - 1), c).final - 1e-12
        assert best >= random_strategy(c, int(rng.integers(1 << 30))).final - 1e-12


def test_buy_and_hold_cases():
    assert buy_and_hold([100.0, 110.0]).final - 1 == pytest.approx(0.10, abs=1e-15)
    assert buy_and_hold([5.0, 5.0, 5.0]).final - 1 == 0.0
    with pytest.raises(SeriesTooShort):
        buy_and_hold([1.0])


def test_random_strategy_reproducible_and_expectation(rng):
    c = random_path(rng, 30)
    assert np.array_equal(random_strategy(c, 7).values, random_strategy(c, 7).values)
    finals = np.array([random_strategy(c, s).final for s in range(1000)])
    expected = np.prod(1 + (c[1:] / c[:-1] - 1) / 2)
    se = finals.std(ddof=1) / math.sqrt(len(finals))
    assert abs(finals.mean() - expected) < 4 * se
    with pytest.raises(SeriesTooShort):
        random_strategy([1.0], 0)


def test_signal_length_checked():
    with pytest.raises(LengthMismatch):
        run_signal_strategy([1, 1, 1], [1.0, 2.0, 3.0])


def test_drawdown_fixture_and_monotone():
    assert max_drawdown([1.0, 1.2, 0.9, 1.1]) == pytest.approx(0.25, abs=1e-15)
    assert max_drawdown(1.01 ** np.arange(11)) == 0.0
    with pytest.raises(EmptyCurve):
        max_drawdown([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 0.1), min_size=1, max_size=30))
def test_monotone_curves_have_zero_drawdown(steps):
    assert max_drawdown(np.cumprod(1.0 + np.array(steps))) == 0.0


def test_monotone_econ():
    v = 1.01 ** np.arange(11)
    dates = np.arange(np.datetime64("2021-03-01"), np.datetime64("2021-03-12"))
    rep = econ_metrics(EquityCurve(dates, v, [LONG] * 11))
    assert rep.max_drawdown == 0.0
    assert rep.accumulative_return == pytest.approx(1.01 ** 10 - 1, rel=1e-12)
    assert rep.daily_return == pytest.approx(0.01, rel=1e-12)
    assert math.isnan(rep.sharpe_ratio)  # a single month has no dispersion


def test_mixed_fixture_hand_computed():
    dates = np.array(["2021-01-28", "2021-01-29", "2021-02-01", "2021-02-02", "2021-03-01", "2021-03-02"],
                     dtype="datetime64[D]")
    v = np.array([1.0, 1.1, 1.21, 0.968, 1.0648, 1.1])
    rep = econ_metrics(EquityCurve(dates, v, [LONG] * 6))
    # months: Jan 1.0 -> 1.1, Feb 1.21 -> 0.968, Mar 1.0648 -> 1.1
    monthly = [0.1, 0.968 / 1.21 - 1, 1.1 / 1.0648 - 1]
    daily = [0.1, 0.1, 0.968 / 1.21 - 1, 1.0648 / 0.968 - 1, 1.1 / 1.0648 - 1]
    mean_m = sum(monthly) / 3
    sd_m = math.sqrt(sum((m - mean_m) ** 2 for m in monthly) / 2)
    assert rep.accumulative_return == pytest.approx(0.1, abs=1e-12)
    assert rep.monthly_return == pytest.approx(mean_m, abs=1e-12)
    assert rep.sharpe_ratio == pytest.approx(mean_m / sd_m, abs=1e-12)
    assert rep.daily_return == pytest.approx(sum(daily) / 5, abs=1e-12)
    assert rep.max_drawdown == pytest.approx(1 - 0.968 / 1.21, abs=1e-12)
    d = econ_metrics(EquityCurve(dates, v, [LONG] * 6), sharpe_basis="daily")
    mean_d = sum(daily) / 5
    sd_d = math.sqrt(sum((x - mean_d) ** 2 for x in daily) / 4)
    assert d.sharpe_ratio == pytest.approx(mean_d / sd_d, abs=1e-12)


def test_skip_anchor_excludes_prior_close():
    dates = np.array(["2021-01-29", "2021-02-01", "2021-02-02"], dtype="datetime64[D]")
    v = np.array([1.0, 1.05, 1.1])
    assert econ_metrics(EquityCurve(dates, v, [CASH, LONG, LONG])).monthly_return == pytest.approx(
        np.mean([0.0, 1.1 / 1.05 - 1]))
    assert econ_metrics(EquityCurve(dates, v, [CASH, LONG, LONG]), skip_anchor=True).monthly_return == \
        pytest.approx(1.1 / 1.05 - 1)


def test_monthly_returns_grouping():
    dates = np.array(["2020-12-31", "2021-01-04", "2021-01-05"], dtype="datetime64[D]")
    assert np.allclose(monthly_returns([1.0, 2.0, 3.0], dates), [0.0, 0.5])


def test_empty_curve():
    with pytest.raises(EmptyCurve):
        econ_metrics(EquityCurve(np.array([], dtype="datetime64[D]"), np.array([]), []))


def test_csv_exports(tmp_path, rng):
    c = random_path(rng, 5)
    dates = np.arange(np.datetime64("2021-01-04"), np.datetime64("2021-01-09"))
    cur = buy_and_hold(c, dates)
    write_equity_csv(cur, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "date,value,position" and lines[1] == "2021-01-04,1.0,Cash"
    assert float(lines[-1].split(",")[1]) == cur.final
    write_econ_csv({"B&H": econ_metrics(cur)}, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == \
        "strategy,accumulative_return,monthly_return,sharpe_ratio,daily_return,max_drawdown"
