import numpy as np
import pytest

from cosym.dynamics import IntegratorConfig, integrate

from _builders import damped_oscillator

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture(scope="session")
def damped_system():
    return damped_oscillator()


@pytest.fixture(scope="session")
def damped_trajectory(damped_system):
    return integrate(damped_system, [1.0, 0.0, 0.0], IntegratorConfig("rk4", 1e-3, 10.0))


RK4_ORDER_T_END = 0.2


@pytest.fixture(scope="session")
def rk4_order_errors(damped_system):
    """Endpoint errors at dt and dt/2 against a dt=1e-5 reference."""
    x0 = [1.0, 0.0, 0.0]
    ref = integrate(damped_system, x0, IntegratorConfig("rk4", 1e-5, RK4_ORDER_T_END, max_steps=10**6),
                    diagnostics=False).states[-1]
    errs = []
    for dt in (0.05, 0.025):
        end = integrate(damped_system, x0, IntegratorConfig("rk4", dt, RK4_ORDER_T_END), diagnostics=False).states[-1]
        errs.append(float(np.max(np.abs(end - ref))))
    return errs
