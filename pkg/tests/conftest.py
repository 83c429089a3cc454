import time

import pytest

from webfps.corpus import generate_corpus, load_corpus
from webfps.dom import load_manifest
from webfps.model import ModelConfig, ModelRegistry, cross_validate
from webfps.platform import load_platform_spec

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def manifest():
    return load_manifest()


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    generate_corpus(path)
    return path


@pytest.fixture(scope="session")
def records(corpus_path, manifest):
    return load_corpus(corpus_path, manifest)


@pytest.fixture(scope="session")
def tx2():
    return load_platform_spec("jetson-tx2")


@pytest.fixture(scope="session")
def xu3():
    return load_platform_spec("odroid-xu3")


class CvRun:
    def __init__(self, reports, seconds):
        self.reports = reports
        self.seconds = seconds

    def models_by_page(self):
        out = {}
        for r in self.reports:
            reg = ModelRegistry()
            reg.register(r.model)
            for pid in r.validation_ids:
                out[pid] = (reg, r.transform)
        return out


def _cv(records, manifest, platform):
    t0 = time.perf_counter()
    reports = cross_validate(records, manifest, platform, "scroll", ModelConfig(), folds=5)
    return CvRun(reports, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def cv_tx2(records, manifest, tx2):
    """Default-config five-fold CV on the TX2-like platform (shared by several tests)."""
    return _cv(records, manifest, tx2)


@pytest.fixture(scope="session")
def cv_xu3(records, manifest, xu3):
    return _cv(records, manifest, xu3)
