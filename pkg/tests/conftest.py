import numpy as np
import pytest

from ridgediff.imagecore import GrayImage
from ridgediff.synthcorpus import IdentityParams, render_impression, render_master


@pytest.fixture(scope="session")
def master64():
    return render_master(IdentityParams.random(11), 64)


@pytest.fixture(scope="session")
def master128():
    return render_master(IdentityParams.random(11), 128)


@pytest.fixture(scope="session")
def impression_pair128():
    p = IdentityParams.random(21)
    return render_impression(p, 1, 128), render_impression(p, 2, 128)


@pytest.fixture
def noise_image():
    return GrayImage(np.random.default_rng(3).uniform(0.0, 1.0, (64, 64)))


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request):
    """Record one line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        request.config.stash[_ACCEPTANCE].append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
