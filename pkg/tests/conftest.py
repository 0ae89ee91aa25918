import contextlib
import importlib
import time

import numpy as np
import pytest

from lcpattern import _kernels_py
from lcpattern.synthetic import generate_synthetic, staged_lane_change_spec

try:
    _compiled = importlib.import_module("lcpattern._kernels")
except ImportError:  # extension not built
    _compiled = None

_RESULTS = pytest.StashKey[list]()

BACKENDS = [pytest.param(_kernels_py, id="python")]
if _compiled is not None:
    BACKENDS.append(pytest.param(_compiled, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def compiled():
    if _compiled is None:
        pytest.skip("compiled kernels not built")
    return _compiled


@pytest.fixture(scope="session")
def staged():
    return generate_synthetic(staged_lane_change_spec(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Context manager that records a PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_RESULTS, [])

    @contextlib.contextmanager
    def check(number, title):
        t0 = time.perf_counter()
        notes: list[str] = []
        try:
            yield notes
        except BaseException as exc:
            if isinstance(exc, pytest.skip.Exception):
                lines.append(f"criterion {number}: SKIP  {title} ({exc})")
            else:
                first = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
                lines.append(f"criterion {number}: FAIL  {title} ({first})")
            raise
        detail = "; ".join(notes + [f"{time.perf_counter() - t0:.2f} s"])
        lines.append(f"criterion {number}: PASS  {title} ({detail})")

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
