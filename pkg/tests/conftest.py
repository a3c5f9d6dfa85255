import numpy as np
import pytest

from mvlq.model import LQModel, random_model

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def default_scalar() -> LQModel:
    return LQModel.scalar(a=0.2, b=1.0, q=1.0, r=1.0, g=1.0, abar=0.3, c=0.2, cbar=0.1, d=0.3,
                          qbar=0.5, gbar=0.5, beta=0.3, T=1.0)


def model_pool(count: int = 20, base: int = 1000) -> list[LQModel]:
    """Random models with n <= 3, k <= 2, satisfying the positivity assumptions."""
    out = []
    for i in range(count):
        rng = np.random.default_rng(base + i)
        n, k = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        out.append(random_model(rng, n, k))
    return out


@pytest.fixture(scope="session")
def scalar_model():
    return default_scalar()


@pytest.fixture(scope="session")
def pool():
    return model_pool()
