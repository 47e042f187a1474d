"""Shared fixtures and the acceptance summary printed at the end of a run."""

import numpy as np
import pytest

_ACCEPTANCE = {}


def record_result(k: int, passed: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
