import re

import numpy as np
import pytest

from gmabench.keypoints import default_body25_schema
from gmabench.synth import SynthSpec, gen_snippet

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    m = re.match(r"test_c(\d+)_(.+)", name)
    if not m:
        return
    title = m.group(2).replace("_", " ")
    outcome = "PASS" if report.passed else "FAIL"
    _ACCEPTANCE_RESULTS.append(
        (int(m.group(1)), f"[{outcome}] criterion {int(m.group(1)):2d}: {title} ({report.duration:.1f}s)")
    )


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line("  " + line)


@pytest.fixture(scope="session")
def schema():
    return default_body25_schema()


@pytest.fixture(scope="session")
def snippet_fm_plus():
    return gen_snippet(SynthSpec(label=1, seed=101))


@pytest.fixture(scope="session")
def snippet_fm_minus():
    return gen_snippet(SynthSpec(label=0, seed=100))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
