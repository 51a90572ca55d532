import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedkernel import ClientData, FederatedDataset, KernelSpec

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def record_criterion():
    def record(k, passed, text):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {k}: {text}"
        ACCEPTANCE_LINES[k] = line
        print(line)
        return passed
    return record


def linear_dataset(xs, ys, thetas=None, sigma=0.0):
    """Dataset from per-client covariate and response lists (linear kernel)."""
    clients = []
    for i, (x, y) in enumerate(zip(xs, ys)):
        x = np.asarray(x, dtype=float)
        x = x.reshape(-1, 1) if x.ndim == 1 else x
        th = None if thetas is None else np.atleast_1d(np.asarray(thetas[i], dtype=float))
        clients.append(ClientData(x, np.asarray(y, dtype=float), th))
    d = clients[0].x.shape[1]
    return FederatedDataset(tuple(clients), kernel=KernelSpec.linear(d), sigma=sigma)


def random_linear(rng, M=3, n=(2, 6), d=3, sigma=0.3, heterogeneous=True):
    sizes = rng.integers(n[0], n[1] + 1, size=M)
    base = rng.standard_normal(d)
    xs, ys, ths = [], [], []
    for k in sizes:
        th = base + (0.5 * rng.standard_normal(d) if heterogeneous else 0.0)
        x = rng.standard_normal((int(k), d))
        xs.append(x)
        ys.append(x @ th + sigma * rng.standard_normal(int(k)))
        ths.append(th)
    return linear_dataset(xs, ys, ths, sigma)
