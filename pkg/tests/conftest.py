import numpy as np
import pytest


def central_difference(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def assert_gradient_close(analytic, numeric, rel=1e-4, floor=1e-7):
    err = np.abs(analytic - numeric)
    bound = np.maximum(rel * np.abs(numeric), floor)
    worst = np.argmax(err - bound)
    assert np.all(err <= bound), f"coordinate {worst}: analytic {analytic[worst]!r} vs numeric {numeric[worst]!r}"


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL outcome, echoed in the terminal summary."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f": {detail}" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
