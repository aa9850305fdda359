import pytest

from logbalance.solver import BalancedModel, solve

N_REF = 680
X_REF = 420.0
SWEEP = (0.0, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.75, 0.9)


@pytest.fixture(scope="session")
def solved():
    """Reference-size models for the whole beta sweep, warm-started in ascending order."""
    models = {}
    prev = None
    for beta in SWEEP:
        prev = solve(beta, N_REF, X_REF, tol=1e-10, warm_start=prev)
        models[beta] = prev
    return models


@pytest.fixture(scope="session")
def exp_model():
    """The exact beta = 0 profile ``e^x`` at the reference size."""
    return BalancedModel.exponential(N_REF, X_REF)


@pytest.fixture(scope="session")
def xexp_model():
    return BalancedModel.x_exponential(N_REF, X_REF)
