import time

import numpy as np
import pytest

from krsolve.agcg import SolverConfig, run
from krsolve.certificate import MaximizerSettings, QuadraticFidelity
from krsolve.measures import DiscreteMeasure, Domain, KRParams
from krsolve.operators import GaussianSensorOperator

DOMAIN = Domain(lower=(0.0,), upper=(20.0,))


def mini_problem(n_sensors=10, seed=0, epsilon=1e-8):
    """10-sensor shrink of the first reference experiment; solves in seconds."""
    op = GaussianSensorOperator.evenly_spaced(T=0.045, count=n_sensors, domain=DOMAIN)
    params = KRParams(alpha=0.9, beta=0.4, p=1.0)
    truth = DiscreteMeasure(op.sensors.copy(), np.ones(n_sensors))
    mu_r = DiscreteMeasure.from_atoms([((7.0,), 2.8), ((13.0,), 2.8)])
    target = op.apply(truth) - op.apply(mu_r)
    fidelity = QuadraticFidelity(gamma=60.0, target=target)
    config = SolverConfig(
        kr=params,
        epsilon=epsilon,
        max_outer_iterations=120,
        maximizer=MaximizerSettings(grid_points=128, pair_grid=48, top_pairs=256),
        seed=seed,
    )
    return op, fidelity, config


@pytest.fixture(scope="session")
def mini_result():
    op, fidelity, config = mini_problem()
    result = run(config, op, fidelity)
    return op, fidelity, config, result


@pytest.fixture(scope="session")
def mini_result_timed():
    op, fidelity, config = mini_problem()
    t0 = time.perf_counter()
    result = run(config, op, fidelity)
    return op, fidelity, config, result, time.perf_counter() - t0
