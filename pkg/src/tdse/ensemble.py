"""Stage 2: dynamic per-window selection among the seven meta-classifiers."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, SingleClassTraining, TdseError
from .meta import KIND_ORDER, MetaKind, MetaModel, Stage2Params, fit_forest, fit_meta

log = logging.getLogger(__name__)

VALIDATION_FRACTION = 0.2
SCHEDULE_COLUMNS = ("acc_LR", "acc_KNN", "acc_RBF", "acc_Poly", "acc_RF", "acc_ET", "acc_ANN")


def _pair(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return np.column_stack([p, 1.0 - p])
    return p


def stack_features(p_g, p_i, p_m) -> np.ndarray:
    """Rows (x1..x6) = (up, down) of MBCNN, SC-MBCNN and RNN-ER.

    Each stream is either P(Up) per day or (N, 2) (up, down) pairs.
    """
    parts = [_pair(p) for p in (p_g, p_i, p_m)]
    n = {len(p) for p in parts}
    if len(n) != 1:
        raise LengthMismatch(f"feature streams differ in length: {[len(p) for p in parts]}")
    return np.hstack(parts)


def split_validation(n: int, fraction: float = VALIDATION_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """Chronological (fit, validation) index arrays; validation is the last ``fraction``."""
    n_val = max(1, int(round(fraction * n)))
    n_fit = n - n_val
    if n_fit < 2:
        raise SingleClassTraining(f"meta-train segment too short ({n} rows)")
    return np.arange(n_fit), np.arange(n_fit, n)


class MetaFitCache:
    """Memoises meta-classifier fits per (window, kind, hyper-parameters).

    Valid only while the Stage-1 features of each window stay fixed, which
    is exactly the Stage-2 search setting. Forests are grown once at the
    largest tree count and truncated.
    """

    def __init__(self, max_trees: int = 50):
        self.max_trees = max_trees
        self.models: dict = {}
        self.hits = 0

    def fit(self, key, kind: MetaKind, hyper: tuple, X, y, seed: int) -> MetaModel:
        if kind in (MetaKind.RF, MetaKind.ET):
            n = int(hyper[0])
            full_key = (key, kind, "forest", seed)
            if full_key not in self.models:
                self.models[full_key] = fit_forest(X, y, max(self.max_trees, n), kind.value, seed)
            else:
                self.hits += 1
            return self.models[full_key].subset(n)
        k = (key, kind, tuple(hyper), seed)
        if k not in self.models:
            self.models[k] = fit_meta(kind, hyper, X, y, seed)
        else:
            self.hits += 1
        return self.models[k]


@dataclass
class ScheduleEntry:
    window: int
    chosen: MetaKind
    model: MetaModel | None
    accuracies: dict  # MetaKind -> validation accuracy (NaN when the fit failed)
    failures: dict = field(default_factory=dict)

    @property
    def chosen_accuracy(self) -> float:
        return self.accuracies[self.chosen]


def choose(accuracies: dict) -> MetaKind:
    """Argmax accuracy; ties resolved by LR > KNN > RbfSvm > PolySvm > RF > ET > ANN."""
    valid = [k for k in KIND_ORDER if not math.isnan(accuracies.get(k, math.nan))]
    if not valid:
        raise SingleClassTraining("no meta-classifier could be fitted")
    best = max(accuracies[k] for k in valid)
    return next(k for k in valid if accuracies[k] == best)


def select_meta(X, y, params: Stage2Params = Stage2Params(), seed: int = 0, window: int = 0,
                cache: MetaFitCache | None = None, kinds: Sequence[MetaKind] = KIND_ORDER) -> ScheduleEntry:
    """Fit every candidate on the first 80% of the meta-train rows and pick
    the one with the best accuracy on the last 20%."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise SingleClassTraining(f"window {window}: meta-train labels contain one class")
    fit_idx, val_idx = split_validation(len(y))
    accs, models, failures = {}, {}, {}
    for kind in kinds:
        hyper = params.hyper_for(kind)
        try:
            if cache is not None:
                m = cache.fit(window, kind, hyper, X[fit_idx], y[fit_idx], seed)
            else:
                m = fit_meta(kind, hyper, X[fit_idx], y[fit_idx], seed)
            accs[kind] = float(np.mean(m.predict(X[val_idx]) == y[val_idx]))
            models[kind] = m
        except TdseError as exc:
            accs[kind] = math.nan
            failures[kind] = f"{exc.code}: {exc}"
            log.debug("window %s: %s failed: %s", window, kind.value, exc)
    chosen = choose(accs)
    return ScheduleEntry(window, chosen, models[chosen], accs, failures)


def predict_window(entry: ScheduleEntry, X_test) -> tuple[np.ndarray, np.ndarray]:
    """(labels, scores) of the chosen model on the test rows (no refit)."""
    X_test = np.asarray(X_test, dtype=float)
    scores = entry.model.score(X_test)
    return (scores > 0.5).astype(int), scores


def write_schedule_csv(entries: Sequence[ScheduleEntry], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "chosen", *SCHEDULE_COLUMNS])
        for e in entries:
            w.writerow([e.window, e.chosen.value,
                        *(repr(float(e.accuracies.get(k, math.nan))) for k in KIND_ORDER)])
