import numpy as np
import pytest
from hypothesis import settings

from videopower.model import ChannelRealization, QualityProfile, SystemParams

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def params3():
    return SystemParams(3)


@pytest.fixture
def profile3():
    return QualityProfile.default(3)


def random_channel(K, seed):
    rng = np.random.default_rng(seed)
    return ChannelRealization(rng.exponential(1.0, size=(K, K)), seed)


# acceptance criteria register one line each; printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
