import numpy as np
import pytest

from airsum.conv import ConvCode

TOY = ConvCode(3, (0o7, 0o5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_code():
    return TOY


_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def report():
    """Record one acceptance verdict; all verdicts are listed at the end of the run."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
