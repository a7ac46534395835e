"""Command line entry point: ``tdse <command> [--config F] [--seed N] [--workers N] [--out DIR]``.

Commands:
  synth     write a planted-signal raw data tree and its run.cfg
  ingest    align the raw sources into a snapshot (<out>/snapshot)
  train     fixed hyper-parameters, all windows (<out>/train)
  optimize  stage-by-stage genetic search, all windows (<out>/optimize)
  evaluate  recompute metrics and t-tests from saved predictions
  backtest  trading comparison of TDSE, Buy & Hold and Random
  report    figures (PNG) plus the CSV data behind them

Errors print one JSON object on stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as P
from .config import SCHEMA, RunConfig, env_name
from .data import build_windows, load_snapshot, save_snapshot
from .errors import MissingSource, TdseError
from .meta import KIND_ORDER

log = logging.getLogger("tdse")

SOURCES = ("optimize", "train")


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed, "workers": args.workers}
    if args.out is not None:
        overrides["out"] = str(Path(args.out).resolve())
    return RunConfig.load(args.config, overrides)


def _source_dir(cfg: RunConfig, source: str) -> Path:
    out = cfg.path("out")
    if source != "auto":
        d = out / source
        if not (d / "predictions.csv").exists():
            raise MissingSource(f"no {source} run in {out}; run `tdse {source}` first")
        return d
    for s in SOURCES:
        if (out / s / "predictions.csv").exists():
            return out / s
    raise MissingSource(f"no train or optimize run in {out}")


def cmd_synth(args) -> None:
    from .synthetic import SyntheticConfig, generate

    out = Path(args.out or "synthetic")
    generate(out, SyntheticConfig(seed=args.seed or 0))
    print(out / "run.cfg")


def cmd_ingest(args) -> None:
    cfg = _config(args)
    dataset, report = P.ingest(cfg)
    snap = cfg.path("out") / "snapshot"
    save_snapshot(dataset, snap, report)
    log.info("snapshot: %d days, %d violations", len(dataset.calendar), len(report.violations))
    print(snap)


def _run(args, mode: str) -> None:
    cfg = _config(args)
    dataset, wds = P.load_inputs(cfg, cfg.path("out") / "snapshot")
    out = cfg.path("out") / mode
    out.mkdir(parents=True, exist_ok=True)
    if mode == "train":
        result = P.train(cfg, dataset, wds)
    else:
        result = P.optimize(cfg, dataset, wds)
    P.write_run(result, out, cfg)
    acc = np.mean([r.accuracy for r in result.reports["TDSE"]])
    log.info("%s: mean test accuracy %.4f", mode, acc)
    print(out)


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    run_dir = _source_dir(cfg, args.source)
    reports = P.evaluate_run(run_dir)
    for name in P.MODEL_NAMES:
        print(f"{name}: {np.mean([r.accuracy for r in reports[name]]):.4f}")


def _backtest(cfg: RunConfig, source: str, signals: str | None, random_seed: int | None):
    run_dir = _source_dir(cfg, source)
    dataset = load_snapshot(cfg.path("out") / "snapshot")
    windows = build_windows(dataset.calendar, P.window_config(cfg))
    sig_path = signals or cfg["signals"]
    if sig_path:
        signal_map = P.read_signal_file(sig_path)
    else:
        signal_map = P.stitched_signals(P.read_predictions(run_dir / "predictions.csv"), windows)
    if random_seed is None:
        random_seed = cfg["random_seed"] if cfg["random_seed"] >= 0 else P.derive_seed(cfg["seed"], "backtest")
    curves, reports = P.run_backtest(dataset, windows, signal_map, random_seed, cfg["sharpe_basis"])
    out = run_dir / "backtest"
    P.write_backtest(curves, reports, out)
    return out, curves, reports


def cmd_backtest(args) -> None:
    cfg = _config(args)
    out, _, reports = _backtest(cfg, args.source, args.signals, args.random_seed)
    for name, r in reports.items():
        print(f"{name}: accumulative {r.accumulative_return:.4f}, max drawdown {r.max_drawdown:.4f}")
    print(out)


def _read_csv(path) -> list[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _write_rows(path, header, rows) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_report(args) -> None:
    from . import plotting

    cfg = _config(args)
    run_dir = _source_dir(cfg, args.source)
    out = run_dir / "report"
    out.mkdir(exist_ok=True)

    windows, reports = P.reports_from_predictions(P.read_predictions(run_dir / "predictions.csv"))
    series = {name: [r.accuracy for r in reports[name]] for name in P.MODEL_NAMES}
    _write_rows(out / "accuracy_by_window.csv", ["window", *P.MODEL_NAMES],
                [[w, *(repr(float(series[n][i])) for n in P.MODEL_NAMES)] for i, w in enumerate(windows)])
    plotting.plot_accuracy_by_window(windows, series, out / "accuracy_by_window.png")
    P.write_model_comparison(reports, out / "summary.csv")

    sched = _read_csv(run_dir / "schedule.csv")
    kinds = [k.value for k in KIND_ORDER]
    cols = [c for c in sched[0] if c.startswith("acc_")] if sched else []
    acc = np.array([[float(r[c]) for r in sched] for c in cols])
    _write_rows(out / "schedule.csv", ["window", "chosen", *cols], [[r["window"], r["chosen"], *(r[c] for c in cols)]
                                                                    for r in sched])
    plotting.plot_schedule([r["window"] for r in sched], kinds, acc, [r["chosen"] for r in sched],
                           out / "schedule.png")

    _, curves, _ = _backtest(cfg, args.source, None, None)
    plotting.plot_equity({k: (c.dates, c.values) for k, c in curves.items()}, out / "equity.png")
    names = list(curves)
    first = curves[names[0]]
    _write_rows(out / "equity.csv", ["date", *names],
                [[str(d), *(repr(float(curves[n].values[i])) for n in names)] for i, d in enumerate(first.dates)])

    summary = run_dir / "ga_stage2_summary.json"
    if summary.exists():
        hist = json.loads(summary.read_text(encoding="utf-8"))["history"]
        _write_rows(out / "ga_history.csv", ["generation", "best_fitness"], [[i, repr(float(v))] for i, v in enumerate(hist)])
        plotting.plot_ga_history(hist, out / "ga_history.png")
    print(out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (key = value lines)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")

    parser = argparse.ArgumentParser(
        prog="tdse", description="Two-stage dynamic stacking ensemble for daily index direction.",
        epilog="Every config key can also be set as an environment variable, e.g. "
               f"{env_name('ga.population')}=10.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a planted-signal data tree")
    sub.add_parser("ingest", parents=[common], help="align raw sources into a snapshot")
    sub.add_parser("train", parents=[common], help="run all windows with fixed hyper-parameters")
    sub.add_parser("optimize", parents=[common], help="run the stage-by-stage genetic search")
    for name, text in (("evaluate", "recompute metrics from saved predictions"),
                       ("backtest", "trading comparison"), ("report", "render figures and their CSV data")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--source", choices=("auto", *SOURCES), default="auto",
                       help="which run to read (auto prefers optimize)")
        if name == "backtest":
            p.add_argument("--signals", help="CSV of date,signal overriding the model predictions")
            p.add_argument("--random-seed", type=int, help="seed of the Random strategy")
    sub.add_parser("config", parents=[common], help="list config keys and defaults")
    return parser


def cmd_config(args) -> None:
    for key, (_, default, desc) in SCHEMA.items():
        print(f"{key} = {default}    # {desc}")


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": lambda a: _run(a, "train"),
    "optimize": lambda a: _run(a, "optimize"),
    "evaluate": cmd_evaluate,
    "backtest": cmd_backtest,
    "report": cmd_report,
    "config": cmd_config,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except TdseError as exc:
        _error(args.command, exc.code, str(exc))
        return 2
    except (OSError, ValueError) as exc:
        _error(args.command, type(exc).__name__, str(exc))
        return 2
    return 0


def _error(command: str, code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"command": command, "error": code, "message": message}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
