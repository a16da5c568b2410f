"""Shared fixtures and the acceptance-summary hook.

The acceptance tests register one line per criterion in ``CRITERIA``;
the terminal-summary hook prints them after the run so the pass/fail
status of each criterion is visible even though pytest captures stdout.
"""

import numpy as np
import pytest
import torch

from meshflow.mesh import make_icosphere

CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def record_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        CRITERIA[number] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status} - {detail}")


@pytest.fixture(scope="session", autouse=True)
def _single_thread():
    # the sandbox exposes one core; oversubscribed threads only add overhead
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def ico0():
    return make_icosphere(0, radius=1.0)


@pytest.fixture(scope="session")
def ico2():
    return make_icosphere(2, radius=1.0)


@pytest.fixture(scope="session")
def ico3():
    return make_icosphere(3, radius=0.6)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
