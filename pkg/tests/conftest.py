import numpy as np
import pytest

from taig import experiments, models


class QuadraticToy:
    """f_0(x) = x_0 * x_1, f_1 = -f_0. Not piecewise linear: a negative control."""

    input_shape = (2,)
    n_classes = 2

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        f = x[..., 0] * x[..., 1]
        return np.stack([f, -f], axis=-1)

    def input_gradient(self, x, k):
        x = np.asarray(x, dtype=np.float64)
        g = np.stack([x[..., 1], x[..., 0]], axis=-1)
        sign = np.where(np.broadcast_to(k, x.shape[:-1]) == 0, 1.0, -1.0)
        return g * sign[..., None]


@pytest.fixture
def identity_net():
    return models.from_weights([(np.eye(2), np.zeros(2))])


@pytest.fixture
def single_relu_net():
    # f_0 = ReLU(x1 + x2 - 0.5), f_1 = 0
    return models.from_weights([
        (np.array([[1.0], [1.0]]), np.array([-0.5])),
        (np.array([[1.0, 0.0]]), np.zeros(2)),
    ])


@pytest.fixture
def linear_net():
    w = np.array([[0.7, -0.2, 0.0], [-1.3, 0.4, 0.0], [0.25, 0.9, 0.0], [2.0, -0.6, 0.0]])
    return models.from_weights([(w, np.array([0.1, -0.3, 0.0]))])


@pytest.fixture
def mlp():
    return models.init("mlp-16-8", (6,), 3, seed=7)


@pytest.fixture
def quadratic_toy():
    return QuadraticToy()


@pytest.fixture(scope="session")
def desk():
    """Standard blob data, trained zoo and 200 correctly classified test items (seed 0)."""
    nets, train, test, inputs = experiments.desk_setup(0)
    return {"nets": nets, "train": train, "test": test, "inputs": inputs}


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert on it."""

    def record(number: int, title: str, passed: bool, detail: str):
        ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        print(ACCEPTANCE_LINES[number])
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
