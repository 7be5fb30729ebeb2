import numpy as np
import pytest

from dosebo.gp import KernelParams, TrainingSet, fit_hyperparameters

# Filled by tests/test_acceptance.py as criteria run; printed after the run.
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


def random_dataset(rng, n=None, dim=None):
    """A random, well-conditioned GP training problem."""
    n = n or int(rng.integers(4, 21))
    dim = dim or int(rng.integers(1, 5))
    x = rng.uniform(0.0, 1.0, size=(n, dim))
    y = rng.normal(0.0, 1.0, size=n)
    params = KernelParams(
        lengthscales=tuple(rng.uniform(0.3, 2.0, size=dim)),
        scale=float(rng.uniform(0.1, 5.0)),
        noise=float(rng.uniform(1e-3, 0.5)),
    )
    return TrainingSet(x, y), params


@pytest.fixture(scope="session")
def small_fit_pair():
    """One (f, g) surrogate pair fitted on a handful of 2-D doses.

    Shared across acquisition tests; responses make (0.5, 0.5) clearly best
    and high doses toxic.
    """
    doses = np.array([
        [0.0, 0.0], [0.25, 0.0], [0.0, 0.25], [0.5, 0.5],
        [0.75, 0.75], [1.0, 1.0], [0.25, 0.5], [0.5, 0.25],
    ])
    f = np.array([-0.2, -0.5, -0.5, -1.5, -0.6, -0.1, -1.0, -1.0])
    g = np.array([0.01, 0.02, 0.02, 0.10, 0.35, 0.60, 0.05, 0.05])
    f_fit = fit_hyperparameters(TrainingSet(doses, f))
    g_fit = fit_hyperparameters(TrainingSet(doses, g))
    return f_fit, g_fit
