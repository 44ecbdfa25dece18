import numpy as np
import pytest

# one expression per base kernel plus composites used in experiments
BASE_EXPRS = ["SE", "RQ", "Per", "Per[p=free]", "ARD", "Noise"]
COMPOSITES = [
    "SE + SE*Per + RQ + SE + Noise",
    "SE*Per + SE + Noise",
    "ARD + Noise",
    "(SE + RQ)*Per[p=free] + Noise",
    "SE[dim=2]*RQ[dim=1] + SE[amp=fixed] + Noise",
]


def central_diff(f, x, h=1e-5):
    """Central finite differences of a scalar or array valued ``f``."""
    x = np.asarray(x, dtype=float)
    out = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        out.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return out


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_problem(rng, expr, n=6, d=2, eta_scale=0.5):
    from fbgpr.kernels import parse_kernel_expr

    k = parse_kernel_expr(expr, d)
    X = rng.uniform(-2, 2, size=(n, d))
    eta = rng.normal(0.0, eta_scale, k.n_params)
    return k, X, eta


class GaussianTarget:
    """log N(x | mean, cov) up to a constant, with gradient."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        self.prec = np.linalg.inv(self.cov)
        self.dim = self.mean.size
        self.names = tuple(f"x_{j + 1}" for j in range(self.dim))

    def value_and_grad(self, x):
        d = np.asarray(x, dtype=float) - self.mean
        g = -self.prec @ d
        return float(0.5 * d @ g), g

    def __call__(self, x):
        return self.value_and_grad(x)[0]


class FlatTarget:
    dim = 3
    names = ("a", "b", "c")

    def value_and_grad(self, x):
        return 0.0, np.zeros(3)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
