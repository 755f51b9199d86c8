import numpy as np
import pytest


def central_difference(f, x, h=1e-6):
    """Numerical gradient of scalar f at x by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def grad_rel_error(analytic, numeric, floor=1e-6):
    """Largest elementwise relative error, ignoring entries where both are below ``floor``
    (those are compared absolutely and must agree to 1e-9)."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    scale = np.maximum(np.abs(a), np.abs(n))
    big = scale > floor
    if np.any(~big):
        assert np.max(np.abs(a[~big] - n[~big])) < 1e-9
    if not np.any(big):
        return 0.0
    return float(np.max(np.abs(a[big] - n[big]) / scale[big]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# exit-criterion lines, printed once at the end of the session
CRITERIA: dict = {}


def record_criterion(name: str, ok: bool, detail: str) -> None:
    CRITERIA[name] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("exit criteria")
    for name in sorted(CRITERIA):
        ok, detail = CRITERIA[name]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
