"""Long/cash trading strategies and their economic metrics.

Convention: ``signals[t-1]`` is the prediction for day t (made from data up
to day t-1) and, when Up, the strategy is long over the close-to-close move
C[t-1] -> C[t]. No costs or taxes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyCurve, LengthMismatch, SeriesTooShort

LONG, CASH = "Long", "Cash"


@dataclass
class EquityCurve:
    dates: np.ndarray
    values: np.ndarray
    positions: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.dates is None:
            self.dates = np.arange(len(self.values)).astype("datetime64[D]")
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        if not (len(self.dates) == len(self.values) == len(self.positions)):
            raise LengthMismatch("dates, values and positions must have equal length")

    @property
    def final(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class EconReport:
    accumulative_return: float
    monthly_return: float
    sharpe_ratio: float
    daily_return: float
    max_drawdown: float


def _closes(closes) -> np.ndarray:
    c = np.asarray(closes, dtype=float)
    if len(c) < 2:
        raise SeriesTooShort("need at least 2 closes")
    return c


def run_signal_strategy(signals, closes, dates=None) -> EquityCurve:
    """Equity curve starting at 1.0; ``signals`` has one entry per day after the first."""
    c = _closes(closes)
    s = np.asarray(signals, dtype=int)
    if len(s) != len(c) - 1:
        raise LengthMismatch(f"{len(s)} signals for {len(c)} closes (need {len(c) - 1})")
    values = np.empty(len(c))
    values[0] = 1.0
    positions = [CASH]
    entry_value = entry_close = None
    for t in range(1, len(c)):
        if s[t - 1] == 1:
            if entry_value is None:
                entry_value, entry_close = values[t - 1], c[t - 1]
            # value of a position held since entry; keeps long runs exact
            values[t] = entry_value * c[t] / entry_close
            positions.append(LONG)
        else:
            entry_value = entry_close = None
            values[t] = values[t - 1]
            positions.append(CASH)
    return EquityCurve(dates, values, positions)


def buy_and_hold(closes, dates=None) -> EquityCurve:
    c = _closes(closes)
    return EquityCurve(dates, 1.0 * c / c[0], [CASH] + [LONG] * (len(c) - 1))


def random_signals(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2, size=n)


def random_strategy(closes, seed: int, dates=None) -> EquityCurve:
    c = _closes(closes)
    return run_signal_strategy(random_signals(len(c) - 1, seed), c, dates)


def perfect_signals(closes) -> np.ndarray:
    c = _closes(closes)
    return (c[1:] > c[:-1]).astype(int)


def max_drawdown(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EmptyCurve("empty curve")
    return float(np.max(1.0 - v / np.maximum.accumulate(v)))


def monthly_returns(values, dates) -> np.ndarray:
    """(last / first - 1) of the curve within each calendar month."""
    v = np.asarray(values, dtype=float)
    months = np.asarray(dates, dtype="datetime64[M]")
    out = []
    for m in np.unique(months):
        idx = np.flatnonzero(months == m)
        out.append(v[idx[-1]] / v[idx[0]] - 1.0)
    return np.array(out)


def econ_metrics(curve: EquityCurve, sharpe_basis: str = "monthly", skip_anchor: bool = False) -> EconReport:
    """Accumulative, mean monthly, Sharpe (risk-free 0, not annualised),
    mean daily return and maximum drawdown. Sharpe is NaN with fewer than
    two periods or zero dispersion.

    With ``skip_anchor`` the first point is the close before the period
    (value 1.0) and is left out of the monthly grouping.
    """
    v = curve.values
    if v.size == 0:
        raise EmptyCurve("empty curve")
    daily = v[1:] / v[:-1] - 1.0 if v.size > 1 else np.zeros(0)
    s = 1 if skip_anchor and v.size > 1 else 0
    monthly = monthly_returns(v[s:], curve.dates[s:])
    basis = {"monthly": monthly, "daily": daily}[sharpe_basis]
    sd = float(np.std(basis, ddof=1)) if basis.size > 1 else 0.0
    sharpe = float(np.mean(basis) / sd) if sd > 0 else float("nan")
    return EconReport(
        accumulative_return=float(v[-1] - 1.0),
        monthly_return=float(np.mean(monthly)),
        sharpe_ratio=sharpe,
        daily_return=float(np.mean(daily)) if daily.size else 0.0,
        max_drawdown=max_drawdown(v),
    )


def write_equity_csv(curve: EquityCurve, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "value", "position"])
        for d, val, pos in zip(curve.dates, curve.values, curve.positions):
            w.writerow([str(d), repr(float(val)), pos])


ECON_FIELDS = ("accumulative_return", "monthly_return", "sharpe_ratio", "daily_return", "max_drawdown")


def write_econ_csv(rows: dict[str, EconReport], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", *ECON_FIELDS])
        for name, rep in rows.items():
            w.writerow([name, *(repr(float(getattr(rep, f))) for f in ECON_FIELDS)])
