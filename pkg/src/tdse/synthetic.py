"""Planted-signal market generator.

A latent daily factor ``z[d] ~ N(0, 1)`` drives the target's move from
day d-1 to day d: ``r[d] = 0.01 * (z[d] + target_noise * e)``. Three
sources observed on day d-1 carry ``z[d]``:

* region signal: each Asia index returns ``0.01 * (asia_strength * z[d] +
  asia_noise * e)`` on day d-1; Europe, Americas and the pre-market index
  are pure noise;
* industry rotation: industries fall into shuffled groups with a common
  factor each; one group at a time (rotating every ``rotation_months``)
  also carries ``z[d]`` on day d-1;
* provider sentiment: each provider publishes a few documents per day;
  on day d-1 a document is positive with probability
  ``sigmoid(quality * z[d])``, so providers differ in reliability.

Every random draw comes from one seeded generator, so a given config
always writes byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import BranchAssignment, MarketSeries, ReturnKind, write_branches, write_industry_csv, write_ohlcv_csv

ASIA = ("N225", "HSI", "KOSPI")
EUROPE = ("FTSE", "DAX")
AMERICAS = ("SPX", "IXIC")
PRE = ("PREF",)
TARGET = "TARGET"
INDUSTRIES = ("Auto", "Bank", "Chem", "Coal", "Food", "Media", "Metal", "Pharma", "Power", "Realty", "Retail", "Tech")
POSITIVE = tuple(f"gain{i}" for i in range(20))
NEGATIVE = tuple(f"loss{i}" for i in range(20))
FILLER = tuple(f"word{i}" for i in range(60))
STOPWORDS = ("the", "of", "and", "a", "to", "in", "is", "on")


@dataclass
class SyntheticConfig:
    start: str = "2018-10-01"
    end: str = "2021-04-30"
    seed: int = 0
    target_noise: float = 0.1
    asia_strength: float = 1.0
    asia_noise: float = 0.3
    industry_strength: float = 1.0
    industry_noise: float = 0.4
    n_groups: int = 3
    rotation_months: int = 15
    providers: tuple = (("eastmoney", 3.0), ("sina", 2.0), ("hexun", 1.5), ("jrj", 1.0), ("cnstock", 0.0))
    docs_per_day: tuple = (4, 8)
    dropped_global_days: int = 6
    run_overrides: dict = field(default_factory=dict)


def business_days(start: str, end: str) -> np.ndarray:
    days = np.arange(np.datetime64(start, "D"), np.datetime64(end, "D") + 1)
    return days[np.is_busday(days)]


def _ohlcv(symbol: str, dates, returns, rng, level0: float = 1000.0) -> MarketSeries:
    close = level0 * np.cumprod(1.0 + returns)
    prev = np.concatenate([[level0], close[:-1]])
    open_ = prev * (1.0 + 0.002 * rng.standard_normal(len(dates)))
    spread = 1.0 + np.abs(0.003 * rng.standard_normal((2, len(dates))))
    high = np.maximum(open_, close) * spread[0]
    low = np.minimum(open_, close) / spread[1]
    volume = np.round(1e6 * np.exp(0.2 * rng.standard_normal(len(dates))))
    return MarketSeries(symbol, np.asarray(dates, dtype="datetime64[D]"), open_, high, low, close, volume, volume * close)


def _document(positive: bool, rng) -> str:
    n_sent = int(rng.integers(3, 7))
    toks = []
    for _ in range(n_sent):
        good = rng.random() < (0.8 if positive else 0.2)
        toks.append(str(rng.choice(POSITIVE if good else NEGATIVE)))
    toks += [str(rng.choice(FILLER)) for _ in range(int(rng.integers(6, 15)))]
    toks += [str(rng.choice(STOPWORDS)) for _ in range(int(rng.integers(2, 6)))]
    toks += [f"{rng.uniform(-5, 5):.1f}%", ",", "."]
    order = rng.permutation(len(toks))
    return " ".join(toks[i] for i in order)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class SyntheticTruth:
    """Planted quantities, for tests."""

    dates: np.ndarray
    z: np.ndarray
    groups: list  # industry names per group
    leader: np.ndarray  # index of the leading group on each day


def generate(out_dir, cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticTruth:
    """Write a complete raw-input tree plus ``run.cfg`` into ``out_dir``."""
    out = Path(out_dir)
    data = out / "data"
    for sub in ("global", "news", "lexicon"):
        (data / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    dates = business_days(cfg.start, cfg.end)
    n = len(dates)
    z = rng.standard_normal(n)
    z_next = np.concatenate([z[1:], rng.standard_normal(1)])  # factor of the following day

    # target
    target_ret = 0.01 * (z + cfg.target_noise * rng.standard_normal(n))
    target_ret[0] = 0.0
    write_ohlcv_csv(_ohlcv(TARGET, dates, target_ret, rng, 3000.0), data / "target.csv")

    # global indices; Asia on day d-1 leads the target's move on day d
    noisy = list(EUROPE + AMERICAS + PRE)
    drop = set(rng.choice(n - 2, size=cfg.dropped_global_days, replace=False) + 1) if cfg.dropped_global_days else set()
    for sym in ASIA + EUROPE + AMERICAS + PRE:
        if sym in ASIA:
            r = 0.01 * (cfg.asia_strength * z_next + cfg.asia_noise * rng.standard_normal(n))
        else:
            r = 0.01 * rng.standard_normal(n)
        s = _ohlcv(sym, dates, r, rng)
        if sym in noisy and drop:
            keep = np.array([i not in drop for i in range(n)])
            s = MarketSeries(sym, s.dates[keep], s.open[keep], s.high[keep], s.low[keep], s.close[keep],
                             s.volume[keep], s.value[keep])
        write_ohlcv_csv(s, data / "global" / f"{sym}.csv")
    write_branches([
        BranchAssignment("Asia", ASIA),
        BranchAssignment("Europe", EUROPE),
        BranchAssignment("Americas", AMERICAS),
        BranchAssignment("Target", (TARGET,), (ReturnKind.CloseToClose, ReturnKind.OpenToClose)),
        BranchAssignment("Pre", PRE, (ReturnKind.CloseToOpen,)),
    ], data / "branches.ini")

    # industries: shuffled groups, rotating leader
    perm = rng.permutation(len(INDUSTRIES))
    groups = [sorted(INDUSTRIES[i] for i in perm[g::cfg.n_groups]) for g in range(cfg.n_groups)]
    group_of = {name: g for g, names in enumerate(groups) for name in names}
    months = (dates.astype("datetime64[M]") - dates[0].astype("datetime64[M]")).astype(int)
    leader = (months // cfg.rotation_months) % cfg.n_groups
    lead_next = np.concatenate([leader[1:], leader[-1:]])
    factors = rng.standard_normal((cfg.n_groups, n))
    levels = np.empty((len(INDUSTRIES), n))
    for i, name in enumerate(INDUSTRIES):
        g = group_of[name]
        r = 0.01 * (factors[g] + cfg.industry_noise * rng.standard_normal(n)
                    + cfg.industry_strength * np.where(lead_next == g, z_next, 0.0))
        levels[i] = 100.0 * np.cumprod(1.0 + r)
    write_industry_csv(dates, list(INDUSTRIES), levels, data / "industry.csv")

    # news
    lo, hi = cfg.docs_per_day
    for provider, quality in cfg.providers:
        lines = []
        for d in range(n):
            p_pos = _sigmoid(quality * z_next[d])
            for _ in range(int(rng.integers(lo, hi + 1))):
                lines.append(f"{dates[d]}\t{_document(rng.random() < p_pos, rng)}\n")
        (data / "news" / f"{provider}.tsv").write_text("".join(lines), encoding="utf-8")
    (data / "lexicon" / "positive.txt").write_text("\n".join(POSITIVE) + "\n", encoding="utf-8")
    (data / "lexicon" / "negative.txt").write_text("\n".join(NEGATIVE) + "\n", encoding="utf-8")
    (data / "lexicon" / "stopwords.txt").write_text("\n".join(STOPWORDS) + "\n", encoding="utf-8")

    run = {
        "target": "data/target.csv",
        "target_symbol": TARGET,
        "global_dir": "data/global",
        "branches": "data/branches.ini",
        "industry": "data/industry.csv",
        "news_dir": "data/news",
        "lexicon_positive": "data/lexicon/positive.txt",
        "lexicon_negative": "data/lexicon/negative.txt",
        "stopwords": "data/lexicon/stopwords.txt",
        "seed": cfg.seed,
        "out": "out",
        **cfg.run_overrides,
    }
    text = "# synthetic planted-signal run\n" + "".join(f"{k} = {v}\n" for k, v in run.items())
    (out / "run.cfg").write_text(text, encoding="utf-8")
    return SyntheticTruth(dates, z, groups, leader)
