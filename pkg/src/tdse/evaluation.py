"""Classification metrics, AUC and paired t-tests."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (Empty, LengthMismatch, SingleClassLabels, UndefinedPrecision, UndefinedRecall,
                     ZeroVariance)

UNDEFINED = "undefined"


@dataclass(frozen=True)
class ConfusionCounts:
    TU: int  # predicted Up, actual Up
    TD: int  # predicted Down, actual Down
    FU: int  # predicted Up, actual Down
    FD: int  # predicted Down, actual Up

    @property
    def total(self) -> int:
        return self.TU + self.TD + self.FU + self.FD


@dataclass
class MetricReport:
    accuracy: float
    precision: float | None
    recall: float | None
    f_measure: float | None
    auc: float | None = None
    undefined: list[str] = field(default_factory=list)

    def require_precision(self) -> float:
        if self.precision is None:
            raise UndefinedPrecision("no Up predictions (TU + FU = 0)")
        return self.precision

    def require_recall(self) -> float:
        if self.recall is None:
            raise UndefinedRecall("no actual Up days (TU + FD = 0)")
        return self.recall


def confusion(predicted, actual) -> ConfusionCounts:
    p = np.asarray(predicted, dtype=int)
    a = np.asarray(actual, dtype=int)
    if p.shape != a.shape:
        raise LengthMismatch(f"{p.shape} predictions vs {a.shape} labels")
    if p.size == 0:
        raise Empty("no predictions to score")
    return ConfusionCounts(
        TU=int(np.sum((p == 1) & (a == 1))),
        TD=int(np.sum((p == 0) & (a == 0))),
        FU=int(np.sum((p == 1) & (a == 0))),
        FD=int(np.sum((p == 0) & (a == 1))),
    )


def metrics(c: ConfusionCounts) -> MetricReport:
    if c.total <= 0:
        raise Empty("confusion counts are all zero")
    undefined = []
    acc = (c.TU + c.TD) / c.total
    prec = c.TU / (c.TU + c.FU) if c.TU + c.FU else None
    rec = c.TU / (c.TU + c.FD) if c.TU + c.FD else None
    if prec is None:
        undefined.append("precision")
    if rec is None:
        undefined.append("recall")
    if prec is None or rec is None or prec + rec == 0:
        f = None
        undefined.append("f_measure")
    else:
        f = 2 * prec * rec / (prec + rec)
    return MetricReport(acc, prec, rec, f, None, undefined)


def auc(scores, actual) -> float:
    """Area under the ROC curve (trapezoids over distinct score thresholds)."""
    s = np.asarray(scores, dtype=float)
    a = np.asarray(actual, dtype=int)
    if s.shape != a.shape:
        raise LengthMismatch(f"{s.shape} scores vs {a.shape} labels")
    n_pos = int(np.sum(a == 1))
    n_neg = int(np.sum(a == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassLabels("AUC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, a = s[order], a[order]
    # cut after the last element of each block of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.r_[0, np.cumsum(a == 1)[last]]
    fp = np.r_[0, np.cumsum(a == 0)[last]]
    area = np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1]) / 2.0)
    return float(area / (n_pos * n_neg))


def evaluate(predicted, actual, scores=None) -> MetricReport:
    rep = metrics(confusion(predicted, actual))
    if scores is not None:
        try:
            rep.auc = auc(scores, actual)
        except SingleClassLabels:
            rep.auc = None
            rep.undefined.append("auc")
    return rep


# ---------------------------------------------------------------- t-test


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    mean_diff: float


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    n = len(a)
    if n < 2:
        raise LengthMismatch("paired t-test needs at least 2 pairs")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ZeroVariance("differences have zero variance")
    t = float(np.mean(d) / (sd / math.sqrt(n)))
    return TTestResult(t, t_two_sided_p(t, n - 1), n - 1, float(np.mean(d)))


# ---------------------------------------------------------------- reports

METRIC_FIELDS = ("accuracy", "precision", "recall", "f_measure", "auc")


def mean_report(reports: Sequence[MetricReport]) -> tuple[dict, dict]:
    """Per-metric mean over windows skipping undefined entries, plus the skip counts."""
    means, skipped = {}, {}
    for f in METRIC_FIELDS:
        vals = [getattr(r, f) for r in reports if getattr(r, f) is not None]
        means[f] = float(np.mean(vals)) if vals else None
        skipped[f] = len(reports) - len(vals)
    return means, skipped


def _cell(v) -> str:
    return UNDEFINED if v is None else repr(float(v))


def write_metric_reports(reports: Sequence[MetricReport], csv_path, json_path=None, labels=None) -> None:
    """One row per window plus a ``mean`` row; undefined values are written as ``undefined``."""
    labels = list(labels) if labels is not None else [str(i + 1) for i in range(len(reports))]
    means, skipped = mean_report(reports)
    with Path(csv_path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", *METRIC_FIELDS])
        for lab, r in zip(labels, reports):
            w.writerow([lab, *(_cell(getattr(r, f)) for f in METRIC_FIELDS)])
        w.writerow(["mean", *(_cell(means[f]) for f in METRIC_FIELDS)])
    if json_path is not None:
        doc = {
            "windows": [{"window": lab, **{f: getattr(r, f) for f in METRIC_FIELDS}, "undefined": r.undefined}
                        for lab, r in zip(labels, reports)],
            "mean": means,
            "skipped_undefined": skipped,
        }
        Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def report_dict(r: MetricReport) -> dict:
    return asdict(r)
