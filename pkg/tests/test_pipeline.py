import filecmp
from dataclasses import replace

import numpy as np
import pytest

from tdse import pipeline as P
from tdse.backtest import buy_and_hold
from tdse.config import RunConfig
from tdse.data import SampleMatrix, build_windows, owned_test_ranges, save_snapshot
from tdse.extractors import TRAINING_CALLS
from tdse.ga import GaConfig


@pytest.fixture(scope="module")
def trained(synthetic_tree):
    cfg = RunConfig.load(synthetic_tree / "run.cfg", environ={})
    dataset, wds = P.load_inputs(cfg, synthetic_tree / "out" / "snapshot")
    return cfg, dataset, wds, P.train(cfg, dataset, wds)


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_derive_seed_stable_and_distinct():
    assert P.derive_seed(0, 3, "mbcnn") == P.derive_seed(0, 3, "mbcnn")
    seeds = {P.derive_seed(s, w, k) for s in range(3) for w in range(10) for k in P.EXTRACTORS}
    assert len(seeds) == 90


def test_parallel_map_ordered():
    assert P.parallel_map(lambda x: x * x, range(7), workers=3) == [x * x for x in range(7)]


def test_reingest_byte_identical(synthetic_tree, tmp_path):
    cfg = RunConfig.load(synthetic_tree / "run.cfg", environ={})
    dataset, report = P.ingest(cfg)
    save_snapshot(dataset, tmp_path / "snap", report)
    assert same_tree(tmp_path / "snap", synthetic_tree / "out" / "snapshot")


def test_windows_and_segments(trained):
    cfg, dataset, wds, _ = trained
    assert len(wds) == 10
    for wd in wds:
        assert wd.ext_fit.dates[-1] < wd.ext_val.dates[0] <= wd.ext_val.dates[-1] < wd.meta.dates[0]
        assert wd.meta.dates[-1] < wd.test.dates[0]
        assert len(wd.ext_fit) == round(0.8 * (len(wd.ext_fit) + len(wd.ext_val)))
        assert wd.cluster_returns.shape[0] == len(dataset.industry_names)


def test_train_run_shapes(trained):
    _, _, wds, res = trained
    assert len(res.predictions) == len(wds)
    total = sum(len(wd.test) for wd in wds)
    assert sum(len(p.labels) for p in res.predictions) == total
    for p in res.predictions:
        assert p.entry.chosen_accuracy == max(p.entry.accuracies.values())
    assert set(res.reports) == set(P.MODEL_NAMES)
    assert np.mean([r.accuracy for r in res.reports["TDSE"]]) > 0.8


def test_extractors_never_see_test_segment(trained):
    _, _, wds, _ = trained
    wd = wds[0]
    t = wd.test
    rng = np.random.default_rng(0)
    noisy = SampleMatrix(t.dates, t.origin_dates, 1 - t.y, rng.standard_normal(len(t)),
                         {k: rng.standard_normal(v.shape) for k, v in t.branches.items()},
                         rng.standard_normal(t.industry.shape), t.industry_names, rng.standard_normal(t.market.shape),
                         {k: rng.random(v.shape) for k, v in t.sentiment.items()})
    perturbed = replace(wd, test=noisy)
    params = P.Stage1Params(P.MbcnnParams(epochs=3), P.ScMbcnnParams(epochs=3))
    for kind in P.EXTRACTORS:
        a = P.fit_extractor(kind, wd, params.of(kind), seed=1)
        b = P.fit_extractor(kind, perturbed, params.of(kind), seed=1)
        assert a.val_accuracy == b.val_accuracy
        probe = wd.meta
        assert np.array_equal(P.extractor_up(kind, a.model, probe), P.extractor_up(kind, b.model, probe))


def test_stage2_search_does_not_retrain_extractors(trained):
    _, _, _, res = trained
    before = dict(TRAINING_CALLS)
    P.stage2_fitness(res.stage2, res.features, seed=0)
    P.optimize_stage2(res.features, GaConfig(population=4, generations=2, seed=0), seed=0)
    assert dict(TRAINING_CALLS) == before


def test_write_run_repeatable(trained, tmp_path):
    cfg, _, _, res = trained
    P.write_run(res, tmp_path / "a", cfg)
    P.write_run(res, tmp_path / "b", cfg.with_values(workers=8, out="elsewhere"))
    assert same_tree(tmp_path / "a", tmp_path / "b")
    rows = P.read_predictions(tmp_path / "a" / "predictions.csv")
    _, reports = P.reports_from_predictions(rows)
    for name in P.MODEL_NAMES:
        assert [r.accuracy for r in reports[name]] == [r.accuracy for r in res.reports[name]]


def test_stitched_signals_cover_owned_days(trained, tmp_path):
    cfg, dataset, _, res = trained
    P.write_run(res, tmp_path, cfg)
    windows = build_windows(dataset.calendar, P.window_config(cfg))
    sig = P.stitched_signals(P.read_predictions(tmp_path / "predictions.csv"), windows)
    owned = owned_test_ranges(windows)
    span = dataset.calendar[(dataset.calendar >= owned[0][0]) & (dataset.calendar <= owned[-1][1])]
    assert sorted(sig) == list(span)


def test_backtest_all_up_is_buy_and_hold(trained):
    cfg, dataset, _, _ = trained
    windows = build_windows(dataset.calendar, P.window_config(cfg))
    dates, closes = P.backtest_span(dataset.calendar, dataset.target.close, windows)
    curves, reports = P.run_backtest(dataset, windows, {d: 1 for d in dates}, random_seed=1)
    assert np.array_equal(curves["TDSE"].values, buy_and_hold(closes, dates).values)
    assert reports["TDSE"] == reports["Buy & Hold"]


def test_random_seed_changes_only_random(trained, tmp_path):
    cfg, dataset, _, res = trained
    P.write_run(res, tmp_path, cfg)
    windows = build_windows(dataset.calendar, P.window_config(cfg))
    sig = P.stitched_signals(P.read_predictions(tmp_path / "predictions.csv"), windows)
    _, a = P.run_backtest(dataset, windows, sig, random_seed=1)
    _, b = P.run_backtest(dataset, windows, sig, random_seed=2)
    assert a["TDSE"] == b["TDSE"] and a["Buy & Hold"] == b["Buy & Hold"]
    assert a["Random"] != b["Random"]


def test_read_signal_file(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("date,signal\n2021-01-04,1\n2021-01-05,Down\n")
    assert P.read_signal_file(p) == {np.datetime64("2021-01-04"): 1, np.datetime64("2021-01-05"): 0}
    p.write_text("day,value\n")
    with pytest.raises(P.MalformedRow):
        P.read_signal_file(p)
