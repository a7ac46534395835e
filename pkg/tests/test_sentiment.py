import math
import statistics
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdse.errors import ConfigError
from tdse.sentiment import (NEUTRAL_DAY, Polarity, SentimentLexicon, build_index_series, classify_document,
                            daily_index, load_sentiment_csv, preprocess, read_news_file, tfidf,
                            write_sentiment_csv)

LEX = SentimentLexicon(frozenset({"涨", "gain", "good"}), frozenset({"跌", "loss", "bad"}))


def test_preprocess_example():
    assert preprocess(["股市", "，", "上涨", "了"], {"了"}) == ["股市", "上涨"]


def test_preprocess_all_stopwords():
    assert preprocess(["了", "的"], {"了", "的"}) == []


def _independent_filter(doc, stop):
    # second implementation: explicit character classes
    punct = set(",.;:!?()[]{}，。；：！？（）、“”‘’\"'-%$+")
    out = []
    for t in doc:
        if t in stop or not t:
            continue
        if all(ch in punct for ch in t):
            continue
        stripped = t.lstrip("+-").replace(".", "").replace("%", "").replace(",", "")
        if stripped and stripped.isdigit():
            continue
        out.append(t)
    return out


def test_preprocess_corpus_matches_independent_filter(rng):
    vocab = ["股市", "上涨", "了", "的", "，", "。", "2020", "3.5%", "-1.2", "gain", "loss", "abc", "x1", "!!"]
    stop = {"了", "的"}
    for _ in range(100):
        doc = [vocab[i] for i in rng.integers(0, len(vocab), rng.integers(0, 15))]
        assert len(preprocess(doc, stop)) == len(_independent_filter(doc, stop))
        assert preprocess(doc, stop) == _independent_filter(doc, stop)


def test_tfidf_term_in_every_doc_weight_zero():
    w = tfidf([["a", "b"], ["a"], ["a", "c"]])
    assert all(d["a"] == 0.0 for d in w)


def test_tfidf_single_doc():
    assert tfidf([["x"]]) == [{"x": 0.0}]


def test_tfidf_hand_table():
    corpus = [["a", "b", "b"], ["b", "c"], ["c", "d", "d", "d"]]
    w = tfidf(corpus)
    ln = math.log
    expected = [
        {"a": 1 / 3 * ln(3 / 1), "b": 2 / 3 * ln(3 / 2)},
        {"b": 1 / 2 * ln(3 / 2), "c": 1 / 2 * ln(3 / 2)},
        {"c": 1 / 4 * ln(3 / 2), "d": 3 / 4 * ln(3 / 1)},
    ]
    for got, exp in zip(w, expected):
        assert got.keys() == exp.keys()
        for k in exp:
            assert got[k] == pytest.approx(exp[k], abs=1e-15)


def test_classify_examples():
    assert classify_document({"gain": 0.2, "x": 0.1}, LEX) == Polarity.Positive
    assert classify_document({"x": 0.3}, LEX) == Polarity.Neutral
    assert classify_document({}, LEX) == Polarity.Neutral


def test_classify_mixed_brute_force(rng):
    terms = ["gain", "good", "涨", "loss", "bad", "跌", "x", "y"]
    for _ in range(200):
        weights = {t: float(rng.random()) for t in terms if rng.random() < 0.5}
        pos = sum(v for t, v in weights.items() if t in ("gain", "good", "涨"))
        neg = sum(v for t, v in weights.items() if t in ("loss", "bad", "跌"))
        exp = Polarity.Positive if pos > neg else Polarity.Negative if neg > pos else Polarity.Neutral
        assert classify_document(weights, LEX) == exp


def test_lexicon_validation():
    with pytest.raises(ConfigError):
        SentimentLexicon(frozenset({"a"}), frozenset({"a"}))
    with pytest.raises(ConfigError):
        SentimentLexicon(frozenset(), frozenset({"a"}))


def test_daily_index_examples():
    P, N, U = Polarity.Positive, Polarity.Negative, Polarity.Neutral
    assert daily_index([P, P, N, U]) == (0.5, 0.25, 0.25, 4)
    assert daily_index([]) == (1 / 3, 1 / 3, 1 / 3, 0)
    assert daily_index([P, P, P, P, N])[2] == 0.0  # not 1 - 0.8 - 0.2 < 0
    assert NEUTRAL_DAY == (1 / 3, 1 / 3, 1 / 3, 0.0)


def test_monthly_statistics_match_independent_aggregator(rng):
    P, N, U = Polarity.Positive, Polarity.Negative, Polarity.Neutral
    days = [[(P, N, U)[i] for i in rng.integers(0, 3, rng.integers(0, 9))] for _ in range(22)]
    pos = [daily_index(d)[0] for d in days]
    indep = [(sum(1 for p in d if p == P) / len(d)) if d else 1 / 3 for d in days]
    assert statistics.fmean(pos) == pytest.approx(statistics.fmean(indep), abs=1e-15)
    assert statistics.pstdev(pos) == pytest.approx(statistics.pstdev(indep), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(list(Polarity)), max_size=30))
def test_simplex_and_monotonicity(pols):
    row = daily_index(pols)
    assert abs(sum(row[:3]) - 1) <= 1e-9
    assert all(0 <= v <= 1 for v in row[:3])
    assert daily_index(pols + [Polarity.Positive])[0] >= row[0]


def test_build_series_neutral_days_and_determinism():
    docs = [(np.datetime64("2020-01-02"), ["gain", "x"]), (np.datetime64("2020-01-02"), ["loss", "y"]),
            (np.datetime64("2020-01-03"), ["gain", "gain", "z"])]
    cal = np.array(["2020-01-02", "2020-01-03", "2020-01-06"], dtype="datetime64[D]")
    s1 = build_index_series("p", docs, LEX, calendar=cal)
    s2 = build_index_series("p", list(reversed(docs)), LEX, calendar=cal)
    assert np.array_equal(s1.matrix, s2.matrix)
    assert s1.dates.tolist() == cal.tolist()
    assert s1.matrix[2].tolist() == [1 / 3, 1 / 3, 1 / 3, 0.0]
    assert s1.matrix[0].tolist() == [0.5, 0.5, 0.0, 2.0]
    assert np.allclose(s1.matrix[:, :3].sum(axis=1), 1.0, atol=1e-9)


def test_expanding_idf_ignores_future_documents():
    early = [(np.datetime64("2020-01-02"), ["gain", "x"]), (np.datetime64("2020-01-02"), ["loss", "loss", "y"])]
    late = [(np.datetime64("2020-01-03"), ["loss", "q"])] * 5
    a = build_index_series("p", early, LEX)
    b = build_index_series("p", early + late, LEX)
    assert np.array_equal(a.matrix[0], b.matrix[0])


def test_corpus_idf_mode_uses_whole_corpus():
    docs = [(np.datetime64("2020-01-02"), ["gain", "x"]), (np.datetime64("2020-01-03"), ["loss"])]
    s = build_index_series("p", docs, LEX, idf="corpus")
    w = tfidf([["gain", "x"], ["loss"]])
    assert [classify_document(x, LEX) for x in w] == [Polarity.Positive, Polarity.Negative]
    assert s.matrix[:, 0].tolist() == [1.0, 0.0]
    with pytest.raises(ConfigError):
        build_index_series("p", docs, LEX, idf="nope")


def test_news_and_csv_round_trip(tmp_path):
    (tmp_path / "p.tsv").write_text("2020-01-02\tgain x ，\n2020-01-03\tloss 12\n", encoding="utf-8")
    docs = read_news_file(tmp_path / "p.tsv")
    assert docs[0] == (np.datetime64("2020-01-02"), ["gain", "x", "，"])
    s = build_index_series("p", docs, LEX)
    write_sentiment_csv(s, tmp_path / "sentiment_p.csv")
    back = load_sentiment_csv(tmp_path / "sentiment_p.csv")
    assert back.provider == "p"
    assert np.array_equal(back.matrix, s.matrix) and np.array_equal(back.dates, s.dates)
    assert Counter(s.matrix[:, 3].tolist()) == Counter([1.0, 1.0])
