import os

import numpy as np
import pytest
from hypothesis import settings

from emphasis_gnn import synthetic
from emphasis_gnn.model import ModelConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TINY = dict(d1=6, d2=3, hidden=4, d_s=5, head_hidden=4)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): an acceptance criterion")
    config._acceptance = []


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_corpus():
    return synthetic.generate(12, dim=TINY["d1"], seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if report.when == "setup" and report.outcome == "skipped":
            detail = detail or str(report.longrepr[-1])
        item.config._acceptance.append((number, title, status, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = sorted(getattr(config, "_acceptance", []))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in rows:
        line = f"[{status}] criterion {number}: {title}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
