import warnings

import numpy as np
import pytest
from hypothesis import settings

from pptomo.bath import BathSpec, redfield_rates
from pptomo.forward import Experiment, ExperimentGrid, simulate_experiment
from pptomo.model import EnsembleSpec, diagonalize, reference_dimer

settings.register_profile("pptomo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("pptomo")


@pytest.fixture(scope="session")
def dimer():
    return reference_dimer(0.0)


@pytest.fixture(scope="session")
def dimer_basis(dimer):
    return diagonalize(dimer)


@pytest.fixture(scope="session")
def dimer_rates(dimer_basis):
    return redfield_rates(dimer_basis, BathSpec())


@pytest.fixture(scope="session")
def small_experiment():
    grid = ExperimentGrid(np.linspace(12500.0, 13100.0, 61), np.linspace(50.0, 1000.0, 140))
    return Experiment(reference_dimer(), grid=grid, ensemble=EnsembleSpec(40, 3))


@pytest.fixture(scope="session")
def small_sim(small_experiment):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return simulate_experiment(small_experiment)


def random_dimer(rng, disorder=0.0):
    """Random heterodimer with unit first dipole, used by several property tests."""
    from pptomo.model import SiteModel

    e1, e2 = 12800.0 + rng.uniform(-150, 150, 2)
    J = rng.uniform(-150, 150)
    return SiteModel.dimer(e1, e2, J, delta=rng.uniform(0.3, 2.5), phi=rng.uniform(0, np.pi),
                           disorder_sigma=disorder)


ACCEPTANCE_LINES = []


def record_acceptance(line):
    """Collect a PASS/FAIL line for the terminal summary."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
