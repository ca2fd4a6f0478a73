import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_gradient_rot(f, R, h=1e-5):
    """Body-frame so(d) directional derivatives of f at R (central differences)."""
    from anglerig.geometry import exp_so
    d = R.shape[0]
    dr = d * (d - 1) // 2
    g = np.zeros(dr)
    for l in range(dr):
        e = np.zeros(dr)
        e[l] = h
        g[l] = (f(R @ exp_so(e)) - f(R @ exp_so(-e))) / (2 * h)
    return g


ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
