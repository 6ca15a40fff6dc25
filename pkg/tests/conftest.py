import warnings

import pytest

from raqip.device import load_device, toy_config_path
from raqip.gates import CrosstalkWarning


@pytest.fixture(autouse=True)
def _quiet_crosstalk():
    # the default device is intentionally crowded; the warning is tested explicitly
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CrosstalkWarning)
        yield


@pytest.fixture(scope="session")
def default_device():
    return load_device()


@pytest.fixture(scope="session")
def toy_device():
    return load_device(toy_config_path()).without_decoherence()


_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion_report():
    """Collects one summary line per acceptance criterion."""

    def report(number: int, ok: bool, detail: str, seconds: float) -> None:
        status = "PASS" if ok else "FAIL"
        _CRITERIA.append(f"criterion {number}: {status}  {detail}  [{seconds:.1f} s]")

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
