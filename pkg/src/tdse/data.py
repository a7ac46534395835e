"""Ingest, validate, align and window the three data sources.

Everything downstream works on a :class:`MultiSourceDataset`, i.e. arrays
aligned on the target market's trading calendar, and on the
:class:`SampleMatrix` that :func:`assemble_features` cuts out of it.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateDate,
    EmptyResult,
    InsufficientHistory,
    LengthMismatch,
    MalformedRow,
    MissingSource,
    NonPositivePrice,
    SeriesTooShort,
    ConfigError,
)
from .sentiment import SentimentIndexSeries, NEUTRAL_DAY

logger = logging.getLogger(__name__)

BRANCH_NAMES = ("Asia", "Europe", "Americas", "Target", "Pre")
OHLCV_COLUMNS = ("date", "open", "high", "low", "close", "volume", "value")
MARKET_FEATURES = ("open", "high", "low", "close", "volume", "return")


class ReturnKind(str, Enum):
    OpenToClose = "OpenToClose"
    CloseToClose = "CloseToClose"
    CloseToOpen = "CloseToOpen"


class Direction(IntEnum):
    Down = 0
    Up = 1


def _fmt(x: float) -> str:
    # repr round-trips float64 exactly; NaN is written as an empty cell
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _parse_date(text: str) -> np.datetime64:
    return np.datetime64(text.strip(), "D")


# ---------------------------------------------------------------- market data


@dataclass(eq=False)
class MarketSeries:
    symbol: str
    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        for name in OHLCV_COLUMNS[1:]:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.dates)
        if any(len(getattr(self, c)) != n for c in OHLCV_COLUMNS[1:]):
            raise LengthMismatch(f"{self.symbol}: column lengths differ")
        if n > 1 and not np.all(self.dates[1:] > self.dates[:-1]):
            raise DuplicateDate(f"{self.symbol}: dates not strictly increasing")
        for c in ("open", "high", "low", "close"):
            if np.any(~(getattr(self, c) > 0)):
                raise NonPositivePrice(f"{self.symbol}: non-positive {c}")
        if np.any(self.volume < 0) or np.any(self.value < 0):
            raise MalformedRow(self.symbol, 0, "negative volume or value")

    def __len__(self) -> int:
        return len(self.dates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MarketSeries) or self.symbol != other.symbol:
            return False
        return np.array_equal(self.dates, other.dates) and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in OHLCV_COLUMNS[1:])

    def slice(self, start: int, stop: int) -> "MarketSeries":
        return MarketSeries(self.symbol, self.dates[start:stop], *(getattr(self, c)[start:stop] for c in OHLCV_COLUMNS[1:]))


DEFAULT_SCHEMA = {c: c for c in OHLCV_COLUMNS}


def load_ohlcv_csv(path, schema: Mapping[str, str] | None = None, symbol: str | None = None) -> MarketSeries:
    """Read a daily OHLCV file; rows are sorted by date on the way in.

    ``schema`` maps the canonical column names to the header names used in
    the file. The ``value`` column is optional and defaults to 0.
    """
    path = Path(path)
    if not path.exists():
        raise MissingSource(f"missing file: {path}")
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    symbol = symbol or path.stem
    rows = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(path, 1, "empty file, header row required") from None
        cols = {}
        for canon in OHLCV_COLUMNS:
            name = schema[canon]
            if name in header:
                cols[canon] = header.index(name)
            elif canon != "value":
                raise MalformedRow(path, 1, f"header lacks column {name!r}")
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            try:
                day = _parse_date(raw[cols["date"]])
                nums = [float(raw[cols[c]]) if c in cols else 0.0 for c in OHLCV_COLUMNS[1:]]
            except (ValueError, IndexError) as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in nums):
                raise MalformedRow(path, lineno, "non-finite number")
            if min(nums[:4]) <= 0:
                raise NonPositivePrice(f"{path}:{lineno}: prices must be positive")
            if nums[4] < 0 or nums[5] < 0:
                raise MalformedRow(path, lineno, "negative volume or value")
            rows.append((day, nums, lineno))
    rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if a[0] == b[0]:
            raise DuplicateDate(f"{path}:{b[2]}: duplicate date {b[0]}")
    data = np.array([r[1] for r in rows], dtype=float).reshape(len(rows), 6)
    return MarketSeries(symbol, np.array([r[0] for r in rows], dtype="datetime64[D]"), *data.T)


def write_ohlcv_csv(series: MarketSeries, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(OHLCV_COLUMNS) + "\n")
        for i in range(len(series)):
            vals = [str(series.dates[i])] + [_fmt(getattr(series, c)[i]) for c in OHLCV_COLUMNS[1:]]
            fh.write(",".join(vals) + "\n")


# -------------------------------------------------------------------- returns


@dataclass(eq=False)
class ReturnSeries:
    symbol: str
    kind: ReturnKind
    dates: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def compute_returns(series: MarketSeries, kind: ReturnKind | str) -> ReturnSeries:
    kind = ReturnKind(kind)
    n = len(series)
    if kind is ReturnKind.OpenToClose:
        if n < 1:
            raise SeriesTooShort(f"{series.symbol}: need at least 1 row")
        return ReturnSeries(series.symbol, kind, series.dates.copy(), series.close / series.open - 1.0)
    if n < 2:
        raise SeriesTooShort(f"{series.symbol}: need at least 2 rows for {kind.value}")
    if kind is ReturnKind.CloseToClose:
        vals = series.close[1:] / series.close[:-1] - 1.0
    else:
        vals = series.open[1:] / series.close[:-1] - 1.0
    return ReturnSeries(series.symbol, kind, series.dates[1:].copy(), vals)


@dataclass(frozen=True)
class DirectionLabel:
    date: np.datetime64
    direction: Direction
    raw_return: float


def direction_of(raw_return, tie_up: bool = False):
    """Up iff the return is positive; a zero return is Down unless ``tie_up``."""
    r = np.asarray(raw_return)
    return np.where(r >= 0, 1, 0) if tie_up else np.where(r > 0, 1, 0)


def make_labels(series: MarketSeries, tie_up: bool = False) -> list[DirectionLabel]:
    """Label at day t describes the close-to-close move from t to t+1."""
    if len(series) < 2:
        raise SeriesTooShort(f"{series.symbol}: need at least 2 closes to label")
    raw = series.close[1:] / series.close[:-1] - 1.0
    dirs = direction_of(raw, tie_up)
    return [DirectionLabel(series.dates[i], Direction(int(dirs[i])), float(raw[i])) for i in range(len(raw))]


# ------------------------------------------------------------------- branches


@dataclass(frozen=True)
class BranchAssignment:
    branch: str
    symbols: tuple[str, ...]
    return_kinds: tuple[ReturnKind, ...] = (ReturnKind.CloseToClose,)

    @property
    def return_kind(self) -> ReturnKind:
        return self.return_kinds[0]

    @property
    def width(self) -> int:
        return len(self.symbols) * len(self.return_kinds)


def validate_branches(branches: Sequence[BranchAssignment]) -> None:
    names = [b.branch for b in branches]
    missing = [n for n in BRANCH_NAMES if n not in names]
    if missing or len(names) != len(set(names)):
        raise ConfigError(f"branches must be exactly {BRANCH_NAMES}; missing {missing}")
    seen: dict[str, str] = {}
    for b in branches:
        if not b.symbols:
            raise ConfigError(f"branch {b.branch} has no symbols")
        for s in b.symbols:
            if s in seen:
                raise ConfigError(f"symbol {s} assigned to both {seen[s]} and {b.branch}")
            seen[s] = b.branch


def load_branches(path) -> list[BranchAssignment]:
    """Parse the branch config: one ``[Branch]`` section per region with
    ``symbols = A, B`` and ``return_kinds = CloseToClose, OpenToClose``."""
    path = Path(path)
    if not path.exists():
        raise MissingSource(f"missing file: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read(path, encoding="utf-8")
    out = []
    for name in BRANCH_NAMES:
        if name not in cp:
            raise ConfigError(f"{path}: missing branch section [{name}]")
        sec = cp[name]
        symbols = tuple(s.strip() for s in sec.get("symbols", "").split(",") if s.strip())
        kinds_text = sec.get("return_kinds", sec.get("return_kind", "CloseToClose"))
        try:
            kinds = tuple(ReturnKind(k.strip()) for k in kinds_text.split(",") if k.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}: [{name}] {exc}") from None
        out.append(BranchAssignment(name, symbols, kinds))
    validate_branches(out)
    return out


def write_branches(branches: Sequence[BranchAssignment], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for b in branches:
            fh.write(f"[{b.branch}]\n")
            fh.write(f"symbols = {', '.join(b.symbols)}\n")
            fh.write(f"return_kinds = {', '.join(k.value for k in b.return_kinds)}\n\n")


# ------------------------------------------------------------------- industry


def load_industry_csv(path):
    """Return ``(dates, names, levels)`` with ``levels`` shaped (n_industries, n_days)."""
    path = Path(path)
    if not path.exists():
        raise MissingSource(f"missing file: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(path, 1, "empty file, header row required") from None
        if header[0] != "date" or len(header) < 2:
            raise MalformedRow(path, 1, "expected 'date' followed by industry columns")
        names = header[1:]
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise MalformedRow(path, lineno, f"expected {len(header)} cells, got {len(raw)}")
            try:
                rows.append((_parse_date(raw[0]), [float(v) if v.strip() else math.nan for v in raw[1:]], lineno))
            except ValueError as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
    rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if a[0] == b[0]:
            raise DuplicateDate(f"{path}:{b[2]}: duplicate date {b[0]}")
    levels = np.array([r[1] for r in rows], dtype=float).reshape(len(rows), len(names)).T
    if np.any(levels[np.isfinite(levels)] <= 0):
        raise NonPositivePrice(f"{path}: industry levels must be positive")
    return np.array([r[0] for r in rows], dtype="datetime64[D]"), names, levels


def write_industry_csv(dates, names, levels, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["date", *names]) + "\n")
        for j, d in enumerate(dates):
            fh.write(",".join([str(d), *(_fmt(v) for v in levels[:, j])]) + "\n")


# ------------------------------------------------------------------ alignment


def align_to_calendar(calendar: np.ndarray, dates: np.ndarray, values: np.ndarray, policy: str = "ffill"):
    """Map ``values`` (indexed by ``dates``) onto ``calendar``.

    ``ffill`` carries the last observation on or before each calendar day;
    ``drop`` leaves NaN where the source has no row for that exact day.
    Returns the aligned array and the number of filled days.
    """
    values = np.asarray(values, dtype=float)
    out = np.full((len(calendar),) + values.shape[1:], np.nan)
    pos = np.searchsorted(dates, calendar, side="right") - 1
    exact = (pos >= 0) & (dates[np.clip(pos, 0, None)] == calendar) if len(dates) else np.zeros(len(calendar), bool)
    if policy == "drop":
        out[exact] = values[pos[exact]]
        return out, 0
    if policy != "ffill":
        raise ConfigError(f"unknown alignment policy {policy!r}")
    ok = pos >= 0
    out[ok] = values[pos[ok]]
    return out, int(np.sum(ok & ~exact))


@dataclass
class AlignmentReport:
    filled_days: dict = field(default_factory=dict)
    missing_days: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "filled_days": dict(sorted(self.filled_days.items())),
            "missing_days": dict(sorted(self.missing_days.items())),
            "violations": list(self.violations),
        }


@dataclass(eq=False)
class MultiSourceDataset:
    """Arrays aligned on ``target.dates``; NaN marks an unavailable value."""

    target: MarketSeries
    branches: list[BranchAssignment]
    global_returns: dict  # (symbol, ReturnKind) -> (n_days,)
    industry_names: list[str]
    industry_returns: np.ndarray  # (n_industries, n_days)
    sentiment: dict  # provider -> (n_days, 4): positive, negative, neutral, count

    @property
    def calendar(self) -> np.ndarray:
        return self.target.dates

    @property
    def providers(self) -> list[str]:
        return sorted(self.sentiment)

    @property
    def labels(self) -> list[DirectionLabel]:
        return make_labels(self.target)

    def market_matrix(self) -> np.ndarray:
        """(n_days, 6): open, high, low, close, volume, close-to-close return."""
        t = self.target
        ret = np.full(len(t), np.nan)
        ret[1:] = t.close[1:] / t.close[:-1] - 1.0
        return np.column_stack([t.open, t.high, t.low, t.close, t.volume, ret])


def _returns_from_levels(levels: np.ndarray) -> np.ndarray:
    out = np.full(levels.shape, np.nan)
    out[..., 1:] = levels[..., 1:] / levels[..., :-1] - 1.0
    return out


def build_dataset(
    target: MarketSeries,
    global_series: Mapping[str, MarketSeries],
    branches: Sequence[BranchAssignment],
    industry: tuple,
    sentiment: Mapping[str, SentimentIndexSeries],
    global_policy: str = "ffill",
) -> tuple[MultiSourceDataset, AlignmentReport]:
    """Align every source on the target calendar.

    Global returns are computed on each index's own calendar and then
    aligned with ``global_policy``; the target calendar itself is never
    filled, so target-market gaps are simply absent days. Industry levels
    are aligned by carrying the last level and then differenced.
    """
    validate_branches(branches)
    cal = target.dates
    report = AlignmentReport()
    glob = {}
    for b in branches:
        for sym in b.symbols:
            series = target if sym == target.symbol else global_series.get(sym)
            if series is None:
                raise MissingSource(f"no price file for global symbol {sym!r} (branch {b.branch})")
            for kind in b.return_kinds:
                rs = compute_returns(series, kind)
                aligned, filled = align_to_calendar(cal, rs.dates, rs.values, global_policy)
                glob[(sym, kind)] = aligned
                key = f"{sym}:{kind.value}"
                report.filled_days[key] = filled
                report.missing_days[key] = int(np.sum(np.isnan(aligned)))
    ind_dates, ind_names, ind_levels = industry
    lv, filled = align_to_calendar(cal, ind_dates, ind_levels.T, "ffill")
    report.filled_days["industry"] = filled
    ind_ret = _returns_from_levels(lv.T)
    sent = {}
    for provider, s in sorted(sentiment.items()):
        arr = np.tile(np.array(NEUTRAL_DAY), (len(cal), 1))
        idx = {d: i for i, d in enumerate(s.dates)}
        hits = 0
        for j, d in enumerate(cal):
            i = idx.get(d)
            if i is not None:
                arr[j] = s.matrix[i]
                hits += 1
        report.missing_days[f"sentiment:{provider}"] = len(cal) - hits
        sent[provider] = arr
    ds = MultiSourceDataset(target, list(branches), glob, list(ind_names), ind_ret, sent)
    return ds, report


# -------------------------------------------------------------------- windows


@dataclass(frozen=True)
class WindowConfig:
    n_windows: int = 10
    train_months: int = 11
    test_months: int = 3
    extractor_fraction: float = 0.8


@dataclass(frozen=True)
class WindowSplit:
    index: int
    extractor_train: tuple
    meta_train: tuple
    test: tuple
    months: tuple = ()  # 1-based (first train month, last test month)

    def segment_of(self, dates: np.ndarray) -> np.ndarray:
        """0 = extractor-train, 1 = meta-train, 2 = test, -1 = outside."""
        dates = np.asarray(dates, dtype="datetime64[D]")
        seg = np.full(len(dates), -1)
        for code, (a, b) in enumerate((self.extractor_train, self.meta_train, self.test)):
            seg[(dates >= a) & (dates <= b)] = code
        return seg


def month_keys(calendar: np.ndarray) -> np.ndarray:
    return np.asarray(calendar, dtype="datetime64[M]")


def build_windows(calendar: Sequence, config: WindowConfig = WindowConfig()) -> list[WindowSplit]:
    """Sliding windows stepped in whole months.

    Window starts are ``round(w * (M - span) / (W - 1))`` (half-up), so the
    first window starts at the first month and the last window's test range
    ends on the final month.
    """
    cal = np.asarray(calendar, dtype="datetime64[D]")
    months = month_keys(cal)
    uniq = np.unique(months)
    m_total = len(uniq)
    span = config.train_months + config.test_months
    w_count = config.n_windows
    if w_count < 1 or m_total < span:
        raise InsufficientHistory(f"{m_total} months available, {span} needed per window")
    slack = m_total - span
    if w_count > 1 and slack < w_count - 1:
        raise InsufficientHistory(f"{m_total} months cannot hold {w_count} distinct windows of {span} months")
    if w_count == 1:
        starts = [slack]
    else:
        step = slack / (w_count - 1)
        starts = [int(math.floor(w * step + 0.5)) for w in range(w_count)]
    out = []
    for w, s in enumerate(starts, start=1):
        train_days = cal[(months >= uniq[s]) & (months <= uniq[s + config.train_months - 1])]
        test_days = cal[(months >= uniq[s + config.train_months]) & (months <= uniq[s + span - 1])]
        n_ext = int(round(config.extractor_fraction * len(train_days)))
        n_ext = min(max(n_ext, 1), len(train_days) - 1)
        out.append(
            WindowSplit(
                index=w,
                extractor_train=(train_days[0], train_days[n_ext - 1]),
                meta_train=(train_days[n_ext], train_days[-1]),
                test=(test_days[0], test_days[-1]),
                months=(s + 1, s + span),
            )
        )
    return out


def owned_test_ranges(windows: Sequence[WindowSplit]) -> list[tuple]:
    """Non-overlapping partition of the test span: each window owns the days
    from its test start up to (not including) the next window's test start."""
    out = []
    for i, w in enumerate(windows):
        end = w.test[1]
        if i + 1 < len(windows):
            end = min(end, windows[i + 1].test[0] - np.timedelta64(1, "D"))
        out.append((w.test[0], end))
    return out


# ------------------------------------------------------------------- features


@dataclass(frozen=True)
class LagConfig:
    global_lag: int = 1
    industry_lag: int = 5
    news_lag: int = 1


@dataclass(eq=False)
class SampleMatrix:
    """One row per predictable day.

    ``dates[i]`` is the day whose close-to-close move is predicted;
    ``origin_dates[i]`` is the latest day any feature is drawn from.
    """

    dates: np.ndarray
    origin_dates: np.ndarray
    y: np.ndarray
    raw_return: np.ndarray
    branches: dict  # branch -> (N, width), lag-major
    industry: np.ndarray  # (N, n_industries, industry_lag), column 0 = lag 1
    industry_names: list
    market: np.ndarray  # (N, news_lag, 6), oldest first
    sentiment: dict  # provider -> (N, news_lag, 4), oldest first

    def __len__(self) -> int:
        return len(self.dates)

    def take(self, idx) -> "SampleMatrix":
        idx = np.asarray(idx)
        return SampleMatrix(
            self.dates[idx],
            self.origin_dates[idx],
            self.y[idx],
            self.raw_return[idx],
            {k: v[idx] for k, v in self.branches.items()},
            self.industry[idx],
            self.industry_names,
            self.market[idx],
            {k: v[idx] for k, v in self.sentiment.items()},
        )


def assemble_features(dataset: MultiSourceDataset, lags: LagConfig = LagConfig(), tie_up: bool = False) -> SampleMatrix:
    """Pair every predictable day d with features from days d-1, d-2, ...

    A row is dropped when any of its lagged inputs is missing.
    """
    if min(lags.global_lag, lags.industry_lag, lags.news_lag) < 1:
        raise ConfigError("lags must be >= 1")
    cal = dataset.calendar
    n = len(cal)
    max_lag = max(lags.global_lag, lags.industry_lag, lags.news_lag)
    days = np.arange(max_lag, n)
    if len(days) == 0:
        raise EmptyResult("not enough days for the requested lags")
    close = dataset.target.close
    raw = close[days] / close[days - 1] - 1.0

    def lagged(arr, lag, oldest_first=False):
        # arr indexed by day on axis 0 -> (N, lag, ...)
        order = range(lag, 0, -1) if oldest_first else range(1, lag + 1)
        return np.stack([arr[days - k] for k in order], axis=1)

    branches = {}
    for b in dataset.branches:
        cols = np.column_stack([dataset.global_returns[(s, k)] for s in b.symbols for k in b.return_kinds])
        branches[b.branch] = lagged(cols, lags.global_lag).reshape(len(days), -1)
    industry = lagged(dataset.industry_returns.T, lags.industry_lag).transpose(0, 2, 1)
    market = lagged(dataset.market_matrix(), lags.news_lag, oldest_first=True)
    sentiment = {p: lagged(a, lags.news_lag, oldest_first=True) for p, a in dataset.sentiment.items()}

    ok = np.ones(len(days), bool)
    for arr in [*branches.values(), industry, market, *sentiment.values()]:
        ok &= np.all(np.isfinite(arr.reshape(len(days), -1)), axis=1)
    if not ok.any():
        raise EmptyResult("every candidate sample has a missing input")
    keep = np.flatnonzero(ok)
    return SampleMatrix(
        dates=cal[days][keep],
        origin_dates=cal[days - 1][keep],
        y=direction_of(raw, tie_up)[keep].astype(int),
        raw_return=raw[keep],
        branches={k: v[keep] for k, v in branches.items()},
        industry=industry[keep],
        industry_names=list(dataset.industry_names),
        market=market[keep],
        sentiment={k: v[keep] for k, v in sentiment.items()},
    )


# ------------------------------------------------------------------- snapshot


def save_snapshot(dataset: MultiSourceDataset, directory, report: AlignmentReport | None = None) -> None:
    """Write the aligned dataset as plain CSV; output is byte-stable."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ohlcv_csv(dataset.target, d / "target.csv")
    write_branches(dataset.branches, d / "branches.ini")
    keys = sorted(dataset.global_returns, key=lambda k: (k[0], k[1].value))
    with (d / "global_returns.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["date", *(f"{s}:{k.value}" for s, k in keys)]) + "\n")
        for j, day in enumerate(dataset.calendar):
            fh.write(",".join([str(day), *(_fmt(dataset.global_returns[k][j]) for k in keys)]) + "\n")
    write_industry_csv(dataset.calendar, dataset.industry_names, dataset.industry_returns, d / "industry_returns.csv")
    for p in dataset.providers:
        arr = dataset.sentiment[p]
        with (d / f"sentiment_{p}.csv").open("w", encoding="utf-8", newline="") as fh:
            fh.write("date,positive,negative,neutral,count\n")
            for j, day in enumerate(dataset.calendar):
                fh.write(f"{day},{_fmt(arr[j, 0])},{_fmt(arr[j, 1])},{_fmt(arr[j, 2])},{int(arr[j, 3])}\n")
    meta = {"format": "tdse-snapshot", "version": 1, "target": dataset.target.symbol, "providers": dataset.providers}
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if report is not None:
        (d / "alignment_report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_matrix_csv(path):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    dates = np.array([r[0] for r in rows], dtype="datetime64[D]")
    vals = np.array([[float(v) if v else math.nan for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(header) - 1)
    return header[1:], dates, vals


def load_snapshot(directory) -> MultiSourceDataset:
    d = Path(directory)
    if not (d / "meta.json").exists():
        raise MissingSource(f"no snapshot at {d}; run `tdse ingest` first")
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    target = load_ohlcv_csv(d / "target.csv", symbol=meta["target"])
    branches = load_branches(d / "branches.ini")
    cols, _, vals = _read_matrix_csv(d / "global_returns.csv")
    glob = {}
    for i, c in enumerate(cols):
        sym, kind = c.rsplit(":", 1)
        glob[(sym, ReturnKind(kind))] = vals[:, i]
    names, _, ind = _read_matrix_csv(d / "industry_returns.csv")
    sent = {}
    for p in meta["providers"]:
        _, _, arr = _read_matrix_csv(d / f"sentiment_{p}.csv")
        sent[p] = arr
    return MultiSourceDataset(target, branches, glob, names, ind.T.copy(), sent)


def iter_symbols(branches: Iterable[BranchAssignment]) -> list[str]:
    return [s for b in branches for s in b.symbols]
