"""Dictionary + TF-IDF sentiment indices for pre-tokenized news.

Documents are classified by comparing their TF-IDF mass on positive versus
negative lexicon terms; a provider's daily index is the share of its
documents in each polarity.
"""

from __future__ import annotations

import csv
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, MalformedRow, MissingSource

NEUTRAL_DAY = (1 / 3, 1 / 3, 1 / 3, 0.0)


class Polarity(str, Enum):
    Positive = "Positive"
    Negative = "Negative"
    Neutral = "Neutral"


@dataclass(frozen=True)
class SentimentLexicon:
    positive: frozenset
    negative: frozenset

    def __post_init__(self):
        if not self.positive or not self.negative:
            raise ConfigError("lexicon sets must be non-empty")
        if self.positive & self.negative:
            raise ConfigError(f"lexicon sets overlap: {sorted(self.positive & self.negative)[:5]}")

    @classmethod
    def from_files(cls, positive_path, negative_path) -> "SentimentLexicon":
        return cls(frozenset(read_term_file(positive_path)), frozenset(read_term_file(negative_path)))


def read_term_file(path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise MissingSource(f"missing file: {path}")
    return [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]


def _is_punct(tok: str) -> bool:
    return all(unicodedata.category(ch).startswith(("P", "S")) for ch in tok)


def _is_digits(tok: str) -> bool:
    # also drops decimals, percentages and signed figures such as "-3.5%"
    core = tok.replace(".", "").replace(",", "").replace("%", "").lstrip("+-")
    return bool(core) and all(unicodedata.category(ch) == "Nd" for ch in core)


def preprocess(document: Sequence[str], stopwords: Iterable[str] = ()) -> list[str]:
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    out = []
    for tok in document:
        tok = tok.strip()
        if not tok or _is_punct(tok) or _is_digits(tok) or tok in stop:
            continue
        out.append(tok)
    return out


def tfidf(corpus: Sequence[Sequence[str]]) -> list[dict[str, float]]:
    """weight = (count / doc length) * ln(N / df)."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    n = len(corpus)
    df = Counter()
    for doc in corpus:
        df.update(set(doc))
    idf = {t: math.log(n / c) for t, c in df.items()}
    out = []
    for doc in corpus:
        if not doc:
            out.append({})
            continue
        counts = Counter(doc)
        out.append({t: c / len(doc) * idf[t] for t, c in counts.items()})
    return out


def classify_document(weights: Mapping[str, float], lexicon: SentimentLexicon) -> Polarity:
    pos = sum(w for t, w in weights.items() if t in lexicon.positive)
    neg = sum(w for t, w in weights.items() if t in lexicon.negative)
    margin = pos - neg
    if margin > 0:
        return Polarity.Positive
    if margin < 0:
        return Polarity.Negative
    return Polarity.Neutral


def daily_index(polarities: Sequence[Polarity]) -> tuple[float, float, float, int]:
    """(positive, negative, neutral, count); an empty day is (1/3, 1/3, 1/3, 0)."""
    n = len(polarities)
    if n == 0:
        return NEUTRAL_DAY[0], NEUTRAL_DAY[1], NEUTRAL_DAY[2], 0
    c = Counter(polarities)
    pos = c[Polarity.Positive] / n
    neg = c[Polarity.Negative] / n
    return pos, neg, c[Polarity.Neutral] / n, n  # from counts: 1 - pos - neg can dip below 0


@dataclass(eq=False)
class SentimentIndexSeries:
    provider: str
    dates: np.ndarray
    matrix: np.ndarray  # (n_days, 4): positive, negative, neutral, count

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.matrix = np.asarray(self.matrix, dtype=float).reshape(len(self.dates), 4)
        if len(self.dates) and not np.allclose(self.matrix[:, :3].sum(axis=1), 1.0, atol=1e-9):
            raise ValueError(f"{self.provider}: sentiment rows must sum to 1")

    def __len__(self) -> int:
        return len(self.dates)


def _weights(doc: Sequence[str], df: Counter, n_docs: int) -> dict[str, float]:
    if not doc:
        return {}
    counts = Counter(doc)
    return {t: c / len(doc) * math.log(n_docs / df[t]) for t, c in counts.items()}


def build_index_series(provider: str, dated_docs: Sequence[tuple], lexicon: SentimentLexicon,
                       stopwords: Iterable[str] = (), calendar: Sequence | None = None,
                       idf: str = "expanding") -> SentimentIndexSeries:
    """Turn ``(date, tokens)`` pairs for one provider into a daily index.

    With ``idf="expanding"`` a document dated d is weighted with document
    frequencies over all documents dated <= d, so no later text influences
    an earlier index value. ``idf="corpus"`` uses the whole corpus at once.
    Days in ``calendar`` without any document get the neutral default.
    """
    stop = set(stopwords)
    items = sorted(((np.datetime64(d, "D"), preprocess(t, stop)) for d, t in dated_docs), key=lambda x: x[0])
    if idf == "corpus":
        pols = [classify_document(w, lexicon) for w in tfidf([doc for _, doc in items])] if items else []
    elif idf == "expanding":
        pols = []
        df: Counter = Counter()
        n_docs = 0
        i = 0
        while i < len(items):
            j = i
            while j < len(items) and items[j][0] == items[i][0]:
                df.update(set(items[j][1]))
                j += 1
            n_docs = j
            pols.extend(classify_document(_weights(items[k][1], df, n_docs), lexicon) for k in range(i, j))
            i = j
    else:
        raise ConfigError(f"unknown idf mode {idf!r}")
    by_day: dict = {}
    for (d, _), p in zip(items, pols):
        by_day.setdefault(int(d.astype("int64")), []).append(p)
    days = set(by_day)
    if calendar is not None:
        days |= set(np.asarray(calendar, dtype="datetime64[D]").astype("int64").tolist())
    days = sorted(days)
    rows = [daily_index(by_day.get(d, [])) for d in days]
    return SentimentIndexSeries(provider, np.array(days, dtype="int64").astype("datetime64[D]"),
                                np.array(rows, dtype=float).reshape(len(days), 4))


def read_news_file(path) -> list[tuple]:
    """Rows are ``date<TAB>space-separated tokens``."""
    path = Path(path)
    if not path.exists():
        raise MissingSource(f"missing file: {path}")
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            day, sep, text = line.partition("\t")
            if not sep:
                raise MalformedRow(path, lineno, "expected date<TAB>tokens")
            try:
                d = np.datetime64(day.strip(), "D")
            except ValueError as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
            out.append((d, text.split()))
    return out


def write_sentiment_csv(series: SentimentIndexSeries, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("date,positive,negative,neutral,count\n")
        for d, row in zip(series.dates, series.matrix):
            fh.write(f"{d},{float(row[0])!r},{float(row[1])!r},{float(row[2])!r},{int(row[3])}\n")


def load_sentiment_csv(path, provider: str | None = None) -> SentimentIndexSeries:
    path = Path(path)
    if not path.exists():
        raise MissingSource(f"missing file: {path}")
    provider = provider or path.stem.removeprefix("sentiment_")
    dates, rows = [], []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"date", "positive", "negative", "neutral", "count"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise MalformedRow(path, 1, f"header must contain {sorted(need)}")
        for lineno, r in enumerate(reader, start=2):
            try:
                dates.append(np.datetime64(r["date"].strip(), "D"))
                rows.append([float(r["positive"]), float(r["negative"]), float(r["neutral"]), float(r["count"])])
            except (ValueError, TypeError) as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
            if abs(sum(rows[-1][:3]) - 1.0) > 1e-6 or min(rows[-1]) < 0:
                raise MalformedRow(path, lineno, "indices must be non-negative and sum to 1")
    order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
    return SentimentIndexSeries(provider, np.array(dates, dtype="datetime64[D]")[order],
                                np.array(rows, dtype=float).reshape(len(rows), 4)[order])
