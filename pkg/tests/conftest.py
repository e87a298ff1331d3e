from __future__ import annotations

import pytest

from ecgtransfer.model import BackboneConfig, BlockConfig
from ecgtransfer.toy import ToySpec, generate_toy

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        number, title = crit
        _CRITERIA.setdefault(number, [title, []])[1].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        if "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {number:>2}: {status:<4}  {title}")


# ---------------------------------------------------------------------------
# shared fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def small_backbone() -> BackboneConfig:
    """A fast 8 x 5000 network for pipeline-level tests."""
    return BackboneConfig(
        blocks=(BlockConfig(8, 4, 4, 7, 8), BlockConfig(4, 8, 8, 5, 8)),
        tail_conv_channels=8, mlp_hidden=(16, 8))


@pytest.fixture(scope="session")
def tiny_backbone() -> BackboneConfig:
    """2 leads x 32 samples, one block, no dropout."""
    return BackboneConfig(blocks=(BlockConfig(2, 3, 3, 3, 2),), tail_conv_channels=3,
                          tail_kernel=3, mlp_hidden=(4,), dropout=0.0, n_leads=2, n_samples=32)


@pytest.fixture(scope="session")
def toy_small():
    return generate_toy(ToySpec(n_records=60, seed=3))
