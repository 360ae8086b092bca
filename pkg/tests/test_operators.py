import math

import numpy as np
import pytest

from krsolve.measures import DipoleAtom, DiracAtom, DiscreteMeasure, Domain, KRParams
from krsolve.operators import GaussianFieldOperator, GaussianSensorOperator, Observation

DOMAIN = Domain(lower=(0.0,), upper=(20.0,))
PARAMS = KRParams(alpha=0.9, beta=0.4, p=1.0)
PEAK = 1 / math.sqrt(4 * math.pi * 0.045)


@pytest.fixture
def sensor_op():
    return GaussianSensorOperator.evenly_spaced(T=0.045, count=30, domain=DOMAIN)


@pytest.fixture
def field_op():
    return GaussianFieldOperator(T=0.045, domain=DOMAIN, num_nodes=501)


def test_apply_peak_value():
    op = GaussianSensorOperator(T=0.045, sensors=[[7.0]], domain=DOMAIN)
    mu = DiscreteMeasure.from_atoms([((7.0,), 1.0)])
    np.testing.assert_allclose(op.apply(mu), [PEAK], rtol=1e-12)
    assert PEAK == pytest.approx(1.329808, abs=1e-6)


def test_apply_empty_and_linear(sensor_op):
    assert np.all(sensor_op.apply(DiscreteMeasure.empty()) == 0.0)
    mu = DiscreteMeasure.from_atoms([((3.0,), 1.0), ((11.5,), -0.5)])
    nu = DiscreteMeasure.from_atoms([((8.2,), 2.0)])
    lhs = sensor_op.apply(mu.scale(2.0) + nu.scale(-1.0))
    rhs = 2 * sensor_op.apply(mu) - sensor_op.apply(nu)
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_adjoint_value_matches_kernel():
    op = GaussianSensorOperator(T=0.045, sensors=[[7.0]], domain=DOMAIN)
    y = np.array([1.0])
    assert op.adjoint_value(y, np.array([7.0])) == pytest.approx(PEAK, rel=1e-12)
    assert op.adjoint_value(np.zeros(1), np.array([5.0])) == 0.0


def test_adjoint_kernel_symmetry(sensor_op):
    # K* of a coordinate vector evaluated at z equals (K delta_z) at that sensor
    z = np.array([4.321])
    e3 = np.zeros(sensor_op.y_dim)
    e3[3] = 1.0
    forward = sensor_op.apply(DiscreteMeasure(z[None, :], [1.0]))[3]
    assert sensor_op.adjoint_value(e3, z) == pytest.approx(forward, rel=1e-13)


def test_adjoint_consistency_duality(sensor_op, field_op):
    rng = np.random.default_rng(0)
    for op in (sensor_op, field_op):
        mu = DiscreteMeasure(rng.uniform(0, 20, (4, 1)), rng.normal(size=4))
        y = rng.normal(size=op.y_dim)
        lhs = op.y_inner(op.apply(mu), y)
        rhs = sum(
            w * op.adjoint_value(y, z) for z, w in zip(mu.locations, mu.weights)
        )
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_gradient_and_hessian_finite_difference(sensor_op, field_op):
    rng = np.random.default_rng(1)
    h = 1e-5
    for op in (sensor_op, field_op):
        y = rng.normal(size=op.y_dim)
        for z0 in rng.uniform(1, 19, 6):
            z = np.array([z0])
            g = op.adjoint_grad(y, z)
            fd_g = (op.adjoint_value(y, z + h) - op.adjoint_value(y, z - h)) / (2 * h)
            assert g[0] == pytest.approx(fd_g, rel=1e-5, abs=1e-5 * (1 + abs(fd_g)))
            hess = op.adjoint_hess(y, z)
            fd_h = (
                op.adjoint_value(y, z + h)
                - 2 * op.adjoint_value(y, z)
                + op.adjoint_value(y, z - h)
            ) / h**2
            assert hess[0, 0] == pytest.approx(fd_h, rel=1e-4, abs=1e-4 * (1 + abs(fd_h)))


def test_gradient_zero_at_sensor_peak():
    op = GaussianSensorOperator(T=0.045, sensors=[[7.0]], domain=DOMAIN)
    y = np.array([1.0])
    assert op.adjoint_grad(y, np.array([7.0]))[0] == pytest.approx(0.0, abs=1e-14)
    hess = op.adjoint_hess(y, np.array([7.0]))
    assert hess[0, 0] == pytest.approx(-PEAK / (2 * 0.045), rel=1e-12)
    assert hess[0, 0] < 0


def test_batched_adjoint_matches_scalar(field_op):
    rng = np.random.default_rng(2)
    y = rng.normal(size=field_op.y_dim)
    Z = rng.uniform(0, 20, (9, 1))
    vals = field_op.adjoint_value(y, Z)
    grads = field_op.adjoint_grad(y, Z)
    hesses = field_op.adjoint_hess(y, Z)
    for k in range(9):
        assert vals[k] == pytest.approx(field_op.adjoint_value(y, Z[k]), rel=1e-12)
        assert grads[k, 0] == pytest.approx(field_op.adjoint_grad(y, Z[k])[0], rel=1e-12)
        assert hesses[k, 0, 0] == pytest.approx(
            field_op.adjoint_hess(y, Z[k])[0, 0], rel=1e-12
        )


def test_field_window_matches_full_sum():
    op = GaussianFieldOperator(T=0.045, domain=DOMAIN, num_nodes=2001)
    rng = np.random.default_rng(3)
    y = rng.normal(size=op.y_dim)
    coeff = op.quad_weights * y
    nodes = op._grid[:, 0]
    for z0 in [0.0, 0.004, 10.2, 19.99, 20.0]:
        full = np.sum(coeff * op.scale * np.exp(-((nodes - z0) ** 2) / (4 * op.T)))
        assert op.adjoint_value(y, np.array([z0])) == pytest.approx(full, abs=1e-13)


def test_quadrature_weights():
    op = GaussianFieldOperator(T=0.045, domain=DOMAIN, num_nodes=101)
    assert np.sum(op.quad_weights) == pytest.approx(20.0, rel=1e-12)
    assert np.min(op.quad_weights) > 0


def test_gram_column_dirac_and_dipole(sensor_op):
    col = sensor_op.gram_column(DiracAtom(sign=1, z=7.0), PARAMS)
    mu = DiscreteMeasure.from_atoms([((7.0,), 1 / 0.9)])
    np.testing.assert_allclose(col, sensor_op.apply(mu), atol=1e-14)

    dip = DipoleAtom(x=6.0, y=6.6)
    col_dip = sensor_op.gram_column(dip, PARAMS)
    cx = sensor_op.apply(DiscreteMeasure.from_atoms([((6.0,), 1.0)]))
    cy = sensor_op.apply(DiscreteMeasure.from_atoms([((6.6,), 1.0)]))
    np.testing.assert_allclose(col_dip, (cx - cy) / (0.4 + 0.6), atol=1e-14)


def test_operator_validation():
    with pytest.raises(ValueError):
        GaussianSensorOperator(T=0.0, sensors=[[1.0]], domain=DOMAIN)
    with pytest.raises(ValueError):
        GaussianSensorOperator(T=0.045, sensors=np.zeros((0, 1)), domain=DOMAIN)
    with pytest.raises(ValueError):
        GaussianSensorOperator(T=0.045, sensors=[[25.0]], domain=DOMAIN)
    with pytest.raises(ValueError):
        GaussianFieldOperator(T=0.045, domain=DOMAIN, num_nodes=1)


def test_observation_validation():
    Observation(values=np.ones(3), kind="sensor")
    with pytest.raises(ValueError):
        Observation(values=np.array([np.nan]), kind="sensor")
    with pytest.raises(ValueError):
        Observation(values=np.ones(3), kind="banana")
