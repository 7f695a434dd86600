import numpy as np
import pytest

from src.closed_form import ClosedFormSolver
from src.fock_oracle import ConservedCharges


@pytest.fixture(scope='session')
def solver():
    return ClosedFormSolver()


@pytest.fixture(scope='session')
def params_100(solver):
    return solver.solve_elliptic_params(100)


@pytest.fixture
def charges_100():
    return ConservedCharges.for_number_state(100)


@pytest.fixture
def first_period_grid():
    """Uniform grid over one period of the n = 100 curve, step 1e-3"""
    return np.linspace(0.0, 0.7, 701)


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)
