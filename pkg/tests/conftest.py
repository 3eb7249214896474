import numpy as np
import pytest

from dora import numerics as nx


def numeric_grad(f, param: nx.Node, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``param.value``."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = float(f().value.reshape(-1)[0])
        flat[i] = old - h
        down = float(f().value.reshape(-1)[0])
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), 1.0))


def analytic_grads(f, params):
    for p in params:
        p.zero_grad()
    nx.backward(f())
    return [p.grad.copy() for p in params]


def gradcheck(f, params, h: float = 1e-5) -> float:
    """Worst relative error between backward() and central differences."""
    worst = 0.0
    for p, g in zip(params, analytic_grads(f, params)):
        worst = max(worst, max_rel_error(g, numeric_grad(f, p, h)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed again in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
