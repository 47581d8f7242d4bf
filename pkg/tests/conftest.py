import numpy as np
import pytest

from ordernet import tensor as T


def numeric_grad(fn, arrays, h=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. each array (modified in place)."""
    grads = []
    for arr in arrays:
        flat = arr.reshape(-1)
        g = np.zeros_like(flat)
        for k in range(flat.size):
            keep = flat[k]
            flat[k] = keep + h
            up = fn()
            flat[k] = keep - h
            down = fn()
            flat[k] = keep
            g[k] = (up - down) / (2 * h)
        grads.append(g.reshape(arr.shape))
    return grads


def rel_error(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


@pytest.fixture
def f64():
    with T.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if report.failed:
        status = "FAIL"
        if not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else report.when
    elif report.skipped:
        status = "SKIP"
    else:
        status = "PASS"
    _CRITERIA[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        terminalreporter.write_line(f"{status} criterion {number:2d} {title}: {detail}")
