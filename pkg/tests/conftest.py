from __future__ import annotations

from datetime import datetime

import pytest

from obsmatch.pipeline import RunConfig, default_catalogs, default_strategy, run_pipeline

FIXED_NOW = datetime(2025, 7, 23, 11, 12, 18)


def fixture_config(out_dir, **changes) -> RunConfig:
    base = dict(strategy=default_strategy(), catalogs=default_catalogs(), output_dir=out_dir, now=FIXED_NOW)
    return RunConfig(**{**base, **changes})


@pytest.fixture(scope="session")
def fixture_run(tmp_path_factory):
    """One full pipeline run over the shipped fixtures with the rule validator."""
    out = tmp_path_factory.mktemp("run")
    return run_pipeline(fixture_config(out))


# --- acceptance report -------------------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion, reported as PASS/FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    if report.when == "call" or report.failed:
        _CRITERIA[number] = ("PASS" if report.passed else "FAIL", title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        verdict, title = _CRITERIA[number]
        terminalreporter.write_line(f"{verdict}  criterion {number}: {title}")
