import numpy as np
import pytest

from hemp.lloyd import Codebook
from hemp.params import ParamStore


def one_layer(values, levels):
    values = np.asarray(values, dtype=np.float64)
    return ParamStore([("w", values.shape, values)]), [Codebook(0, np.asarray(levels, dtype=np.float64))]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and print it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} [{criterion}] {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
