import numpy as np
import pytest

from hyscdg.demo import build_demo_corpus

_ACCEPTANCE_REPORTS = []


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """4 small tiles for unit-level pipeline tests."""
    root = tmp_path_factory.mktemp("corpus_small")
    build_demo_corpus(root, tiles=4, size=64, seed=3)
    return root


@pytest.fixture(scope="session")
def acceptance_corpus(tmp_path_factory):
    """The 16-tile, 128x128 fixture the acceptance criteria run on."""
    root = tmp_path_factory.mktemp("corpus_acceptance")
    build_demo_corpus(root, tiles=16, size=128, seed=7)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE_REPORTS.append(report)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_REPORTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for report in _ACCEPTANCE_REPORTS:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else "FAIL"
        terminalreporter.write_line(f"{status} {name}")
