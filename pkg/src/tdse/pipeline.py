"""End-to-end orchestration: ingest -> windows -> Stage 1 -> Stage 2 -> reports.

Every random choice is seeded from ``derive_seed(run_seed, ...)`` keyed by
what is being fitted, never by execution order, so a run gives the same
bytes for any worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing as mp
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .backtest import (buy_and_hold, econ_metrics, random_signals, run_signal_strategy,
                       write_econ_csv, write_equity_csv)
from .config import RunConfig
from .data import (BRANCH_NAMES, AlignmentReport, LagConfig, MultiSourceDataset, SampleMatrix, WindowConfig,
                   WindowSplit, assemble_features, build_dataset, build_windows, iter_symbols, load_branches,
                   load_industry_csv, load_ohlcv_csv, owned_test_ranges)
from .ensemble import MetaFitCache, ScheduleEntry, predict_window, select_meta, stack_features, write_schedule_csv
from .errors import MalformedRow, MissingSource, TdseError
from .evaluation import MetricReport, evaluate, paired_t_test, write_metric_reports
from .extractors import (MbcnnParams, RnnErParams, ScMbcnnParams, mbcnn_from_genome, mbcnn_space,
                         region_inputs, rnn_er_from_genome, rnn_er_space, sc_mbcnn_from_genome, sc_mbcnn_space,
                         train_mbcnn, train_rnn_er, train_sc_mbcnn)
from .ga import GaConfig, GaResult, Gene, SearchSpace, evolve, write_log
from .meta import (GRID_C, GRID_DEGREE, GRID_GAMMA, GRID_NEIGHBORS, GRID_TREES, GRID_WIDTH,
                   Stage2Params)
from .sentiment import SentimentLexicon, build_index_series, read_news_file, read_term_file

log = logging.getLogger(__name__)

EXTRACTORS = ("mbcnn", "sc_mbcnn", "rnn_er")
MODEL_NAMES = ("TDSE", "MBCNN", "SC-MBCNN", "RNN-ER", "Label t-1", "Random")


def derive_seed(*parts) -> int:
    ints = [p if isinstance(p, int) and p >= 0 else zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


# ------------------------------------------------------------------ parallel

_TASK: Callable | None = None
_ITEMS: list = []


def _run_task(i):
    return _TASK(_ITEMS[i])


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map over a fork-based process pool (plain loop for one worker)."""
    global _TASK, _ITEMS
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    _TASK, _ITEMS = fn, items
    try:
        with ProcessPoolExecutor(min(workers, len(items)), mp_context=mp.get_context("fork")) as ex:
            return list(ex.map(_run_task, range(len(items))))
    finally:
        _TASK, _ITEMS = None, []


# -------------------------------------------------------------------- ingest


def ingest(cfg: RunConfig) -> tuple[MultiSourceDataset, AlignmentReport]:
    cfg.check_paths(["target", "branches", "industry", "news_dir", "global_dir",
                     "lexicon_positive", "lexicon_negative", "stopwords"])
    target = load_ohlcv_csv(cfg.path("target"), symbol=cfg["target_symbol"])
    branches = load_branches(cfg.path("branches"))
    glob = {}
    for sym in iter_symbols(branches):
        if sym == target.symbol:
            continue
        path = cfg.path("global_dir") / f"{sym}.csv"
        if not path.exists():
            raise MissingSource(f"missing price file for global index {sym}: {path}")
        glob[sym] = load_ohlcv_csv(path, symbol=sym)
    industry = load_industry_csv(cfg.path("industry"))
    lexicon = SentimentLexicon.from_files(cfg.path("lexicon_positive"), cfg.path("lexicon_negative"))
    stop = read_term_file(cfg.path("stopwords"))
    news_files = sorted(cfg.path("news_dir").glob("*.tsv"))
    if not news_files:
        raise MissingSource(f"no <provider>.tsv files in {cfg.path('news_dir')}")
    sentiment = {
        f.stem: build_index_series(f.stem, read_news_file(f), lexicon, stop, calendar=target.dates, idf=cfg["idf"])
        for f in news_files
    }
    return build_dataset(target, glob, branches, industry, sentiment, cfg["global_policy"])


def window_config(cfg: RunConfig) -> WindowConfig:
    return WindowConfig(cfg["n_windows"], cfg["train_months"], cfg["test_months"], cfg["extractor_fraction"])


def lag_config(cfg: RunConfig) -> LagConfig:
    return LagConfig(cfg["global_lag"], cfg["industry_lag"], max(cfg["news_lag"], cfg["rnn.lag"]))


# ------------------------------------------------------------------- windows


@dataclass(eq=False)
class WindowData:
    split: WindowSplit
    ext_fit: SampleMatrix
    ext_val: SampleMatrix
    meta: SampleMatrix
    test: SampleMatrix
    cluster_returns: np.ndarray  # (n_industries, days) over the extractor-fit days

    @property
    def index(self) -> int:
        return self.split.index


def prepare_windows(dataset: MultiSourceDataset, samples: SampleMatrix, wcfg: WindowConfig) -> list[WindowData]:
    out = []
    cal = dataset.calendar
    for w in build_windows(cal, wcfg):
        seg = w.segment_of(samples.dates)
        ext = np.flatnonzero(seg == 0)
        n_fit = int(round(0.8 * len(ext)))
        fit_idx, val_idx = ext[:n_fit], ext[n_fit:]
        ext_fit = samples.take(fit_idx)
        days = (cal >= ext_fit.dates[0]) & (cal <= ext_fit.dates[-1]) if len(fit_idx) else np.zeros(len(cal), bool)
        ret = dataset.industry_returns[:, days]
        ret = ret[:, np.all(np.isfinite(ret), axis=0)]
        out.append(WindowData(w, ext_fit, samples.take(val_idx), samples.take(np.flatnonzero(seg == 1)),
                              samples.take(np.flatnonzero(seg == 2)), ret))
    return out


# ------------------------------------------------------------------- Stage 1


@dataclass(frozen=True)
class Stage1Params:
    mbcnn: MbcnnParams = MbcnnParams()
    sc: ScMbcnnParams = ScMbcnnParams()
    rnn: RnnErParams = RnnErParams()

    def of(self, kind: str):
        return {"mbcnn": self.mbcnn, "sc_mbcnn": self.sc, "rnn_er": self.rnn}[kind]


@dataclass
class ExtractorFit:
    kind: str
    model: object
    val_accuracy: float


def extractor_up(kind: str, model, samples: SampleMatrix) -> np.ndarray:
    if kind == "mbcnn":
        return model.predict_up(region_inputs(samples))
    return model.predict_up(samples)


def fit_extractor(kind: str, wd: WindowData, params, seed: int) -> ExtractorFit:
    if kind == "mbcnn":
        model = train_mbcnn(region_inputs(wd.ext_fit), wd.ext_fit.y, params, seed, BRANCH_NAMES)
    elif kind == "sc_mbcnn":
        model = train_sc_mbcnn(wd.ext_fit, wd.cluster_returns, params, seed)
    elif kind == "rnn_er":
        model = train_rnn_er(wd.ext_fit, wd.ext_val, params, seed)
    else:
        raise ValueError(f"unknown extractor {kind!r}")
    acc = float(np.mean((extractor_up(kind, model, wd.ext_val) > 0.5) == wd.ext_val.y)) if len(wd.ext_val) else math.nan
    return ExtractorFit(kind, model, acc)


@dataclass(eq=False)
class WindowFeatures:
    index: int
    meta_X: np.ndarray
    meta_y: np.ndarray
    meta_dates: np.ndarray
    test_X: np.ndarray
    test_y: np.ndarray
    test_dates: np.ndarray
    test_raw: np.ndarray
    test_prev_up: np.ndarray  # direction of the day before each test day
    val_accuracy: dict
    clusters: list
    reliabilities: dict
    models: dict = field(default_factory=dict)


def stage1_window(wd: WindowData, params: Stage1Params, seed: int, keep_models: bool = True) -> WindowFeatures:
    fits = {k: fit_extractor(k, wd, params.of(k), derive_seed(seed, wd.index, k)) for k in EXTRACTORS}

    def feats(samples):
        return stack_features(*(extractor_up(k, fits[k].model, samples) for k in EXTRACTORS))

    sc = fits["sc_mbcnn"].model
    return WindowFeatures(
        index=wd.index,
        meta_X=feats(wd.meta),
        meta_y=wd.meta.y.copy(),
        meta_dates=wd.meta.dates.copy(),
        test_X=feats(wd.test),
        test_y=wd.test.y.copy(),
        test_dates=wd.test.dates.copy(),
        test_raw=wd.test.raw_return.copy(),
        test_prev_up=(wd.test.market[:, -1, 5] > 0).astype(int),
        val_accuracy={k: fits[k].val_accuracy for k in EXTRACTORS},
        clusters=sc.clustering.groups(),
        reliabilities=dict(fits["rnn_er"].model.reliabilities),
        models={k: f.model for k, f in fits.items()} if keep_models else {},
    )


def run_stage1(wds: Sequence[WindowData], params: Sequence[Stage1Params], seed: int, workers: int = 1,
               keep_models: bool = True) -> list[WindowFeatures]:
    jobs = list(zip(wds, params))
    return parallel_map(lambda job: stage1_window(job[0], job[1], seed, keep_models), jobs, workers)


def _stage1_space(kind: str, providers):
    if kind == "mbcnn":
        return mbcnn_space(), mbcnn_from_genome
    if kind == "sc_mbcnn":
        return sc_mbcnn_space(), sc_mbcnn_from_genome
    return rnn_er_space(providers), lambda g: rnn_er_from_genome(g, providers)


def optimize_stage1(wds: Sequence[WindowData], providers: Sequence[str], ga: GaConfig, seed: int,
                    workers: int = 1) -> tuple[list[Stage1Params], list[dict]]:
    """Independent GA per (window, extractor); fitness = extractor validation accuracy."""
    jobs = [(i, k) for i in range(len(wds)) for k in EXTRACTORS]

    def job(j):
        i, kind = j
        wd = wds[i]
        space, decode = _stage1_space(kind, list(providers))
        fit_seed = derive_seed(seed, wd.index, kind)
        res = evolve(replace(ga, seed=derive_seed(seed, wd.index, kind, "ga")), space,
                     lambda g: fit_extractor(kind, wd, decode(g), fit_seed).val_accuracy)
        return res

    results = parallel_map(job, jobs, workers)
    out, logs = [], []
    for i, wd in enumerate(wds):
        chosen = {}
        for kind in EXTRACTORS:
            res = results[jobs.index((i, kind))]
            _, decode = _stage1_space(kind, list(providers))
            chosen[kind] = decode(res.best)
            logs.append({"window": wd.index, "extractor": kind, "best_fitness": res.best_fitness,
                         "history": res.history, "generations": res.generations_run,
                         "best": _space_dict(kind, providers, res.best)})
        out.append(Stage1Params(chosen["mbcnn"], chosen["sc_mbcnn"], chosen["rnn_er"]))
    return out, logs


def _space_dict(kind, providers, genome):
    space, _ = _stage1_space(kind, list(providers))
    return space.decode(genome)


# ------------------------------------------------------------------- Stage 2

STAGE2_SPACE = SearchSpace((
    Gene("lr_C", GRID_C),
    Gene("rbf_C", GRID_C),
    Gene("rbf_gamma", GRID_GAMMA),
    Gene("poly_C", GRID_C),
    Gene("poly_degree", GRID_DEGREE),
    Gene("rf_trees", GRID_TREES),
    Gene("ann_h1", GRID_WIDTH),
    Gene("ann_h2", GRID_WIDTH),
    Gene("ann_h3", GRID_WIDTH),
    Gene("knn_k", GRID_NEIGHBORS),
    Gene("et_trees", GRID_TREES),
))


def stage2_from_genome(genome) -> Stage2Params:
    return Stage2Params(**STAGE2_SPACE.decode(genome))


@dataclass
class WindowPrediction:
    entry: ScheduleEntry
    labels: np.ndarray
    scores: np.ndarray


def stage2_window(wf: WindowFeatures, params: Stage2Params, seed: int,
                  cache: MetaFitCache | None = None) -> WindowPrediction:
    entry = select_meta(wf.meta_X, wf.meta_y, params, derive_seed(seed, wf.index, "meta"), wf.index, cache)
    labels, scores = predict_window(entry, wf.test_X)
    return WindowPrediction(entry, labels, scores)


def run_stage2(feats: Sequence[WindowFeatures], params: Stage2Params, seed: int,
               cache: MetaFitCache | None = None) -> list[WindowPrediction]:
    return [stage2_window(wf, params, seed, cache) for wf in feats]


def stage2_fitness(params: Stage2Params, feats: Sequence[WindowFeatures], seed: int,
                   cache: MetaFitCache | None = None) -> float:
    """Mean test accuracy over the given windows (the search windows)."""
    accs = []
    for wf in feats:
        p = stage2_window(wf, params, seed, cache)
        accs.append(float(np.mean(p.labels == wf.test_y)))
    return float(np.mean(accs))


def optimize_stage2(feats: Sequence[WindowFeatures], ga: GaConfig, seed: int, workers: int = 1,
                    holdout: int = 1, log_path=None) -> tuple[Stage2Params, GaResult]:
    search = list(feats[: len(feats) - holdout]) if len(feats) > holdout else list(feats)
    cache = MetaFitCache()

    def fitness(genome):
        return stage2_fitness(stage2_from_genome(genome), search, seed, cache)

    def describe(genome):
        preds = run_stage2(search, stage2_from_genome(genome), seed, cache)
        return {str(wf.index): p.entry.chosen.value for wf, p in zip(search, preds)}

    res = evolve(ga, STAGE2_SPACE, fitness, workers=workers, describe=describe, log_path=log_path)
    return stage2_from_genome(res.best), res


# -------------------------------------------------------------- full runs


@dataclass
class RunResult:
    mode: str
    features: list[WindowFeatures]
    stage1: list[Stage1Params]
    stage2: Stage2Params
    predictions: list[WindowPrediction]
    reports: dict  # model name -> list[MetricReport]
    ga_stage2: GaResult | None = None
    ga_stage1: list | None = None
    seed: int = 0


def baseline_predictions(wf: WindowFeatures, seed: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """(labels, scores) per comparison model on the window's test rows."""
    out = {}
    for name, col in (("MBCNN", 0), ("SC-MBCNN", 2), ("RNN-ER", 4)):
        s = wf.test_X[:, col]
        out[name] = ((s > 0.5).astype(int), s)
    out["Label t-1"] = (wf.test_prev_up, wf.test_prev_up.astype(float))
    rnd = random_signals(len(wf.test_y), derive_seed(seed, wf.index, "random"))
    out["Random"] = (rnd, rnd.astype(float))
    return out


def score_run(feats, preds, seed) -> dict[str, list[MetricReport]]:
    reports = {name: [] for name in MODEL_NAMES}
    for wf, p in zip(feats, preds):
        reports["TDSE"].append(evaluate(p.labels, wf.test_y, p.scores))
        for name, (lab, sc) in baseline_predictions(wf, seed).items():
            reports[name].append(evaluate(lab, wf.test_y, sc))
    return reports


def load_inputs(cfg: RunConfig, snapshot_dir) -> tuple[MultiSourceDataset, list[WindowData]]:
    from .data import load_snapshot

    dataset = load_snapshot(snapshot_dir)
    samples = assemble_features(dataset, lag_config(cfg), cfg["tie_up"])
    return dataset, prepare_windows(dataset, samples, window_config(cfg))


def train(cfg: RunConfig, dataset: MultiSourceDataset, wds: list[WindowData]) -> RunResult:
    seed, workers = cfg["seed"], cfg["workers"]
    s1 = Stage1Params(cfg.mbcnn_params(), cfg.sc_params(), cfg.rnn_params(dataset.providers))
    params = [s1] * len(wds)
    feats = run_stage1(wds, params, seed, workers)
    s2 = cfg.stage2_params()
    preds = run_stage2(feats, s2, seed)
    return RunResult("train", feats, params, s2, preds, score_run(feats, preds, seed), seed=seed)


def optimize(cfg: RunConfig, dataset: MultiSourceDataset, wds: list[WindowData], log_path=None) -> RunResult:
    seed, workers = cfg["seed"], cfg["workers"]
    s1, logs = optimize_stage1(wds, dataset.providers, cfg.ga_config(1, derive_seed(seed, "stage1")), seed, workers)
    feats = run_stage1(wds, s1, seed, workers)
    s2, ga = optimize_stage2(feats, cfg.ga_config(2, derive_seed(seed, "stage2")), seed, workers,
                             cfg["holdout_windows"], log_path)
    preds = run_stage2(feats, s2, seed)
    return RunResult("optimize", feats, s1, s2, preds, score_run(feats, preds, seed), ga, logs, seed)


# ------------------------------------------------------------------ outputs


def _r(x) -> str:
    return repr(float(x))


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (set, tuple)):
        return list(o)
    return str(o)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def write_predictions(result: RunResult, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "date", "label", "raw_return", "tdse", "tdse_score",
                    "mbcnn_up", "sc_mbcnn_up", "rnn_er_up", "label_t1", "random"])
        for wf, p in zip(result.features, result.predictions):
            rnd = baseline_predictions(wf, result.seed)["Random"][0]
            for i in range(len(wf.test_y)):
                w.writerow([wf.index, str(wf.test_dates[i]), int(wf.test_y[i]), _r(wf.test_raw[i]),
                            int(p.labels[i]), _r(p.scores[i]), _r(wf.test_X[i, 0]), _r(wf.test_X[i, 2]),
                            _r(wf.test_X[i, 4]), int(wf.test_prev_up[i]), int(rnd[i])])


def write_features(wf: WindowFeatures, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "date", "x1", "x2", "x3", "x4", "x5", "x6", "label"])
        for seg, X, y, dates in (("meta", wf.meta_X, wf.meta_y, wf.meta_dates), ("test", wf.test_X, wf.test_y, wf.test_dates)):
            for i in range(len(y)):
                w.writerow([seg, str(dates[i]), *(_r(v) for v in X[i]), int(y[i])])


def write_checkpoints(wf: WindowFeatures, pred: WindowPrediction, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    m = wf.models
    if not m:
        return
    tag = f"window_{wf.index:02d}"
    nn.save_checkpoint(directory / f"{tag}_mbcnn.json", m["mbcnn"].net.state_dict(),
                       {"branches": m["mbcnn"].branch_names})
    nn.save_checkpoint(directory / f"{tag}_sc_mbcnn.json", m["sc_mbcnn"].mbcnn.net.state_dict(),
                       {"clusters": m["sc_mbcnn"].clustering.groups()})
    for p, clf in sorted(m["rnn_er"].classifiers.items()):
        nn.save_checkpoint(directory / f"{tag}_rnn_{p}.json", clf.net.state_dict(),
                           {"provider": p, "lag": clf.lag, "weight": m["rnn_er"].weights[p],
                            "reliability": m["rnn_er"].reliabilities[p]})
    nn.save_checkpoint(directory / f"{tag}_meta.json", pred.entry.model.state(),
                       {"kind": pred.entry.chosen.value})


def write_ttests(reports: dict, path) -> None:
    tdse = [r.accuracy for r in reports["TDSE"]]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mean_diff", "t", "p", "df"])
        for name in MODEL_NAMES[1:]:
            other = [r.accuracy for r in reports[name]]
            try:
                t = paired_t_test(tdse, other)
                w.writerow([name, _r(t.mean_diff), _r(t.t), _r(t.p), t.df])
            except TdseError as exc:
                w.writerow([name, _r(np.mean(tdse) - np.mean(other)), exc.code, exc.code, len(tdse) - 1])


def write_model_comparison(reports: dict, path) -> None:
    """Long format: model,window,metrics...; plus a mean row per model."""
    from .evaluation import METRIC_FIELDS, mean_report

    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "window", *METRIC_FIELDS])
        for name in MODEL_NAMES:
            reps = reports[name]
            for i, r in enumerate(reps, start=1):
                w.writerow([name, i, *(("undefined" if getattr(r, f) is None else _r(getattr(r, f))) for f in METRIC_FIELDS)])
            means, _ = mean_report(reps)
            w.writerow([name, "mean", *(("undefined" if means[f] is None else _r(means[f])) for f in METRIC_FIELDS)])


def write_run(result: RunResult, out_dir, cfg: RunConfig | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metric_reports(result.reports["TDSE"], out / "metrics.csv", out / "metrics.json",
                         [str(wf.index) for wf in result.features])
    write_model_comparison(result.reports, out / "comparison.csv")
    write_ttests(result.reports, out / "ttests.csv")
    write_schedule_csv([p.entry for p in result.predictions], out / "schedule.csv")
    write_predictions(result, out / "predictions.csv")
    (out / "features").mkdir(exist_ok=True)
    (out / "clusters").mkdir(exist_ok=True)
    for wf, p in zip(result.features, result.predictions):
        write_features(wf, out / "features" / f"window_{wf.index:02d}.csv")
        with (out / "clusters" / f"window_{wf.index:02d}.csv").open("w", encoding="utf-8", newline="") as fh:
            fh.write("industry,cluster\n")
            for c, names in enumerate(wf.clusters):
                for n in names:
                    fh.write(f"{n},{c}\n")
        write_checkpoints(wf, p, out / "checkpoints")
    write_json({
        "windows": [{"window": wf.index, "validation_accuracy": wf.val_accuracy,
                     "reliabilities": wf.reliabilities, "stage1": asdict(s1)}
                    for wf, s1 in zip(result.features, result.stage1)],
        "stage2": asdict(result.stage2),
    }, out / "params.json")
    if result.ga_stage2 is not None:
        write_log(result.ga_stage2.log, out / "ga_stage2.jsonl")
        write_json({"history": result.ga_stage2.history, "generations": result.ga_stage2.generations_run,
                    "evaluations": result.ga_stage2.evaluations, "best_fitness": result.ga_stage2.best_fitness,
                    "failures": result.ga_stage2.failures}, out / "ga_stage2_summary.json")
    if result.ga_stage1 is not None:
        write_log(result.ga_stage1, out / "ga_stage1.jsonl")
    if cfg is not None:
        # run-location keys are left out so reports do not depend on them
        (out / "run_config.txt").write_text(cfg.dump(exclude=("workers", "out")), encoding="utf-8")
    return out


# ----------------------------------------------------------- evaluate cmd


def read_predictions(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise MissingSource(f"no predictions at {path}; run `tdse train` or `tdse optimize` first")
    with path.open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def reports_from_predictions(rows: list[dict]) -> tuple[list[str], dict]:
    by_window: dict[str, list[dict]] = {}
    for r in rows:
        by_window.setdefault(r["window"], []).append(r)
    windows = sorted(by_window, key=int)
    cols = {"TDSE": ("tdse", "tdse_score"), "MBCNN": (None, "mbcnn_up"), "SC-MBCNN": (None, "sc_mbcnn_up"),
            "RNN-ER": (None, "rnn_er_up"), "Label t-1": ("label_t1", "label_t1"), "Random": ("random", "random")}
    reports = {name: [] for name in MODEL_NAMES}
    for wkey in windows:
        rs = by_window[wkey]
        y = np.array([int(r["label"]) for r in rs])
        for name, (lab_col, score_col) in cols.items():
            scores = np.array([float(r[score_col]) for r in rs])
            labels = np.array([int(r[lab_col]) for r in rs]) if lab_col else (scores > 0.5).astype(int)
            reports[name].append(evaluate(labels, y, scores))
    return windows, reports


def evaluate_run(run_dir, out_dir=None) -> dict:
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    windows, reports = reports_from_predictions(read_predictions(run_dir / "predictions.csv"))
    write_metric_reports(reports["TDSE"], out / "evaluation.csv", out / "evaluation.json", windows)
    write_model_comparison(reports, out / "evaluation_models.csv")
    write_ttests(reports, out / "evaluation_ttests.csv")
    return reports


# ----------------------------------------------------------- backtest cmd


def read_signal_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingSource(f"signal file not found: {path}")
    out = {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"date", "signal"} <= set(reader.fieldnames):
            raise MalformedRow(path, 1, "header must contain date,signal")
        for lineno, r in enumerate(reader, start=2):
            try:
                out[np.datetime64(r["date"].strip(), "D")] = 1 if r["signal"].strip() in ("1", "Up", "up") else 0
            except ValueError as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
    return out


def stitched_signals(rows: list[dict], windows: Sequence[WindowSplit]) -> dict:
    """Prediction per day, each day taken from the window that owns it."""
    owned = owned_test_ranges(windows)
    by_key = {(int(r["window"]), np.datetime64(r["date"], "D")): int(r["tdse"]) for r in rows}
    out = {}
    for w, (a, b) in zip(windows, owned):
        for (wi, d), s in by_key.items():
            if wi == w.index and a <= d <= b:
                out[d] = s
    return out


def backtest_span(calendar, closes, windows: Sequence[WindowSplit]):
    """(dates, closes) from the last day before the stitched test span through its end."""
    owned = owned_test_ranges(windows)
    start, end = owned[0][0], owned[-1][1]
    i0 = int(np.searchsorted(calendar, start))
    i1 = int(np.searchsorted(calendar, end, side="right"))
    i0 = max(i0 - 1, 0)
    return calendar[i0:i1], closes[i0:i1]


def run_backtest(dataset: MultiSourceDataset, windows: Sequence[WindowSplit], signal_map: dict,
                 random_seed: int, sharpe_basis: str = "monthly") -> tuple[dict, dict]:
    dates, closes = backtest_span(dataset.calendar, dataset.target.close, windows)
    sig = np.array([signal_map.get(d, 0) for d in dates[1:]], dtype=int)
    curves = {
        "TDSE": run_signal_strategy(sig, closes, dates),
        "Buy & Hold": buy_and_hold(closes, dates),
        "Random": run_signal_strategy(random_signals(len(closes) - 1, random_seed), closes, dates),
    }
    reports = {k: econ_metrics(c, sharpe_basis, skip_anchor=True) for k, c in curves.items()}
    return curves, reports


def write_backtest(curves: dict, reports: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_econ_csv(reports, out / "econ.csv")
    for name, c in curves.items():
        slug = name.lower().replace(" & ", "_").replace(" ", "_")
        write_equity_csv(c, out / f"equity_{slug}.csv")
