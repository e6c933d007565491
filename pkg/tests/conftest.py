from __future__ import annotations

import numpy as np
import pytest

from myodec.config import RunConfig
from myodec.simulator import gen_freeform_session, make_subject

# criterion number -> (passed, detail) for the acceptance summary
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n = mark.args[0]
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    entry = _CRITERIA.setdefault(n, [True, []])
    entry[0] = entry[0] and rep.passed
    if detail:
        entry[1].append(detail)
    elif not rep.passed:
        entry[1].append(f"{item.name} failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, details = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  "
                                    + " | ".join(details))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def short_session():
    """60 s freeform recording of the default subject."""
    return gen_freeform_session(make_subject(0), 60.0, seed=0)


@pytest.fixture
def fast_cfg():
    cfg = RunConfig()
    cfg.tcn.epochs = 1
    cfg.lstm.epochs = 1
    cfg.svr.max_train = 300
    cfg.protocol.min_freeform_s = 30.0
    return cfg
