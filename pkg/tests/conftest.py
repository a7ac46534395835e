import numpy as np
import pytest

from tdse.data import MarketSeries


def make_series(closes, symbol="T", start="2020-01-01", opens=None):
    closes = np.asarray(closes, dtype=float)
    n = len(closes)
    dates = np.arange(np.datetime64(start, "D"), np.datetime64(start, "D") + n)
    opens = closes if opens is None else np.asarray(opens, dtype=float)
    high = np.maximum(opens, closes) * 1.01
    low = np.minimum(opens, closes) * 0.99
    vol = np.full(n, 1000.0)
    return MarketSeries(symbol, dates, opens, high, low, closes, vol, vol * closes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_tree(tmp_path_factory):
    """A planted-signal raw data tree plus its ingested snapshot."""
    from tdse import pipeline as P
    from tdse.config import RunConfig
    from tdse.data import save_snapshot
    from tdse.synthetic import generate

    root = tmp_path_factory.mktemp("synthetic")
    generate(root)
    cfg = RunConfig.load(root / "run.cfg", environ={})
    dataset, report = P.ingest(cfg)
    save_snapshot(dataset, root / "out" / "snapshot", report)
    return root


# ---------------------------------------------------------------- acceptance

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): numbered acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when == "call" or report.outcome != "passed":
        marker = getattr(report, "acceptance", None)
        if marker is not None:
            prev = _ACCEPTANCE.get(marker[0])
            if prev is None or prev[1] == "PASS":
                _ACCEPTANCE[marker[0]] = (marker[1], "PASS" if report.outcome == "passed" else "FAIL",
                                          report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("acceptance")
    if m is not None:
        outcome.get_result().acceptance = m.args


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, status, secs = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}  ({secs:.1f}s)")
