import numpy as np
import pytest

from vbsgpr.data import kmeans_partition
from vbsgpr.elbo import BlockedProblem, VariationalState
from vbsgpr.expectations import HyperVariational
from vbsgpr.kernels import InducingSet, NoiseKernelParams


def random_hyper(rng, d, spread=0.3):
    return HyperVariational(
        rng.normal(0.9, spread, d), rng.uniform(0.02, 0.3, d), float(rng.uniform(0.6, 1.4)), float(rng.uniform(0.02, 0.3))
    )


def make_problem(variant="pitc", n=40, d=2, M=5, B=4, seed=1, zeta=1.2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=n)
    part = kmeans_partition(X, B, seed=0)
    noise = NoiseKernelParams(np.ones(d), 0.5, 0.3, X[:3])
    inducing = InducingSet(X[:M] * 0.9, zeta)
    return BlockedProblem.build(X, y, part.blocks, variant, noise, inducing)


def random_state(problem, rng):
    M, d = problem.inducing.size, problem.dim
    L = np.tril(rng.normal(size=(M, M)) * 0.3) + np.eye(M)
    return VariationalState(rng.normal(size=M), L, random_hyper(rng, d))


def richardson(f, h):
    """Central difference with one Richardson extrapolation step (error O(h^4))."""
    d1 = (f(h) - f(-h)) / (2 * h)
    d2 = (f(h / 2) - f(-h / 2)) / h
    return (4 * d2 - d1) / 3


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, summary line), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {line}")
