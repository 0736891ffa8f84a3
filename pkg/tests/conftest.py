import numpy as np
import pytest

from epduct.background import BackgroundParams, integrate
from epduct.gas import GasLaw

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(num, ok, detail=""):
        ACCEPTANCE[num] = (bool(ok), detail)
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _record


@pytest.fixture(scope="session")
def bg_moderate():
    """Weak-coupling background used for the weight, energy and nonlinear scenarios."""
    p = BackgroundParams(GasLaw(1.0, 0.05), 0.025, 2.0, 0.01, length_request=2.0)
    return integrate(p, 1e-3)


@pytest.fixture(scope="session")
def bg_constant():
    p = BackgroundParams(GasLaw(1.0, 0.05), 0.025, 2.0, 0.0, length_request=2.0)
    return integrate(p, 1e-3)


@pytest.fixture(scope="session")
def bg_polytropic():
    p = BackgroundParams(GasLaw(1.4, 0.05), 0.025, 2.0, 0.01, length_request=2.0)
    return integrate(p, 1e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
