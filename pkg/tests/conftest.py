import numpy as np
import pytest

from svrgld.models import generate_logistic_model, generate_quadratic_model


@pytest.fixture(scope="session")
def small_quadratic():
    return generate_quadratic_model(d=3, n=200, eigenvalues=[1.0, 2.0, 3.0], seed=101)


@pytest.fixture(scope="session")
def small_logistic():
    return generate_logistic_model(
        d=3, n=150, true_param=[0.5, -0.25, 1.0], lam=0.5, seed=202
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
