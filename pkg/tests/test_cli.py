import json
import shutil

import pytest

from tdse.cli import build_parser, main


@pytest.fixture(scope="module")
def trained_out(synthetic_tree, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "out"
    shutil.copytree(synthetic_tree / "out" / "snapshot", out / "snapshot")
    assert main(["train", "--config", str(synthetic_tree / "run.cfg"), "--out", str(out)]) == 0
    return out


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_help_lists_commands():
    text = build_parser().format_help()
    for cmd in ("synth", "ingest", "train", "optimize", "evaluate", "backtest", "report"):
        assert cmd in text


def test_config_command(capsys):
    assert main(["config"]) == 0
    assert "ga.crossover_rate = 0.8" in capsys.readouterr().out


def test_missing_industry_file(synthetic_tree, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    text = (synthetic_tree / "run.cfg").read_text().replace("data/industry.csv", str(tmp_path / "none.csv"))
    text = text.replace("data/", str(synthetic_tree / "data") + "/")
    cfg.write_text(text)
    assert main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = error_of(capsys)
    assert err["command"] == "ingest" and err["error"] == "MissingSource" and "industry" in err["message"]


def test_backtest_without_run(tmp_path, capsys):
    assert main(["backtest", "--out", str(tmp_path)]) == 2
    assert error_of(capsys)["error"] == "MissingSource"


def test_train_outputs(trained_out):
    names = {p.name for p in (trained_out / "train").iterdir()}
    assert {"metrics.csv", "comparison.csv", "ttests.csv", "schedule.csv", "predictions.csv", "params.json",
            "run_config.txt", "features", "clusters", "checkpoints"} <= names
    assert len(list((trained_out / "train" / "features").glob("*.csv"))) == 10


def test_evaluate_command(trained_out, capsys):
    assert main(["evaluate", "--out", str(trained_out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("TDSE: ") and float(lines[0].split()[1]) > 0.8
    assert (trained_out / "train" / "evaluation.csv").exists()


def test_backtest_command_and_signal_override(trained_out, tmp_path, capsys):
    assert main(["backtest", "--out", str(trained_out)]) == 0
    econ = (trained_out / "train" / "backtest" / "econ.csv").read_text().splitlines()
    assert econ[0].startswith("strategy,") and len(econ) == 4
    capsys.readouterr()
    snap = (trained_out / "snapshot" / "target.csv").read_text().splitlines()[1:]
    sig = tmp_path / "up.csv"
    sig.write_text("date,signal\n" + "".join(f"{line.split(',')[0]},1\n" for line in snap))
    assert main(["backtest", "--out", str(trained_out), "--signals", str(sig)]) == 0
    rows = {r.split(",")[0]: r.split(",")[1:] for r in
            (trained_out / "train" / "backtest" / "econ.csv").read_text().splitlines()[1:]}
    assert rows["TDSE"] == rows["Buy & Hold"]


def test_report_renders_png_and_csv(trained_out):
    assert main(["report", "--out", str(trained_out)]) == 0
    rep = trained_out / "train" / "report"
    for stem in ("accuracy_by_window", "schedule", "equity"):
        assert (rep / f"{stem}.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    for name in ("accuracy_by_window.csv", "schedule.csv", "equity.csv", "summary.csv"):
        assert (rep / name).stat().st_size > 0
