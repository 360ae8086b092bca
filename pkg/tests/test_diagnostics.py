import numpy as np
import pytest

from krsolve.agcg import ActiveSet, SolveResult
from krsolve.certificate import MaximizerSettings, QuadraticFidelity, build_certificate
from krsolve.diagnostics import (
    InsufficientDataError,
    check_first_order,
    check_linear_assumptions,
    fit_tail_rate,
)
from krsolve.agcg import IterateRecord
from krsolve.measures import DipoleAtom, DiracAtom, DiscreteMeasure, KRParams

SETTINGS = MaximizerSettings(grid_points=96, pair_grid=32, top_pairs=128, perturb_rounds=1)


def _records(rhats):
    return [
        IterateRecord(
            k=k, surrogate=0.0, max_abs_q_over_alpha=0.0, max_psi=0.0,
            n_atoms=0, inserted_kind="none", r_hat=r,
        )
        for k, r in enumerate(rhats)
    ]


def test_fit_tail_rate_geometric():
    rhats = [0.9**k for k in range(30)]
    slope, r_sq = fit_tail_rate(_records(rhats))
    assert slope == pytest.approx(np.log(0.9), abs=1e-9)
    assert r_sq == pytest.approx(1.0, abs=1e-12)


def test_fit_tail_rate_constant():
    slope, r_sq = fit_tail_rate(_records([0.5] * 20))
    assert slope == pytest.approx(0.0, abs=1e-12)


def test_fit_tail_rate_insufficient():
    with pytest.raises(InsufficientDataError):
        fit_tail_rate(_records([1.0] * 5))
    with pytest.raises(InsufficientDataError):
        fit_tail_rate(_records([0.0] * 20))


def test_first_order_zero_data_passes(mini_result):
    op, fidelity, config, _ = mini_result
    empty = SolveResult(
        active_set=ActiveSet(), measure=DiscreteMeasure.empty(1),
        history=[], termination="converged",
    )
    zero_fid = QuadraticFidelity(gamma=fidelity.gamma, target=np.zeros(op.y_dim))
    report = check_first_order(empty, op, zero_fid, config.kr, tol=1e-8, settings=SETTINGS)
    assert report.passed
    assert report.max_abs_q_over_alpha == pytest.approx(0.0, abs=1e-14)


def test_first_order_mini_run(mini_result):
    op, fidelity, config, result = mini_result
    report = check_first_order(
        result, op, fidelity, config.kr, tol=1e-6, settings=config.maximizer
    )
    assert report.passed
    assert all(report.dirac_sign_ok)
    assert report.max_abs_q_over_alpha <= 1 + 1e-6


def test_first_order_detects_corruption(mini_result):
    op, fidelity, config, result = mini_result
    lams = result.active_set.lambdas.copy()
    lams[0] *= 2.0
    corrupted_set = ActiveSet(atoms=list(result.active_set.atoms), lambdas=lams)
    corrupted = SolveResult(
        active_set=corrupted_set,
        measure=corrupted_set.measure(config.kr, dim=1),
        history=result.history,
        termination="converged",
    )
    report = check_first_order(
        corrupted, op, fidelity, config.kr, tol=1e-6, settings=config.maximizer
    )
    assert not report.passed


def test_assumption_report_mini_run(mini_result):
    op, fidelity, config, result = mini_result
    report = check_linear_assumptions(
        result, op, fidelity, config.kr, settings=config.maximizer
    )
    assert report.n_diracs + report.n_dipoles == result.active_set.size
    assert len(report.singular_values) == result.active_set.size
    assert min(report.singular_values) > 0
    assert report.min_coefficient > 0
    # sign-scaled curvature at active Diracs is concave
    assert all(report.dirac_definite)
    # curvature values agree with central differences on the rebuilt certificate
    cert = build_certificate(op, fidelity, result.measure)
    h = 1e-5
    diracs = [a for a in result.active_set.atoms if isinstance(a, DiracAtom)]
    for atom, det in zip(diracs, report.dirac_hessians):
        z = np.asarray(atom.z)
        fd = (
            cert.q_value(z + h) - 2 * cert.q_value(z) + cert.q_value(z - h)
        ) / h**2
        assert det == pytest.approx(fd, rel=1e-3)
    dipoles = [a for a in result.active_set.atoms if isinstance(a, DipoleAtom)]
    for atom, det in zip(dipoles, report.dipole_hessians):
        x, y = np.asarray(atom.x), np.asarray(atom.y)
        H = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                e_i = np.array([h if i == 0 else 0.0]), np.array([h if i == 1 else 0.0])
                e_j = np.array([h if j == 0 else 0.0]), np.array([h if j == 1 else 0.0])
                fpp = cert.psi_value(config.kr, x + e_i[0] + e_j[0], y + e_i[1] + e_j[1])
                fpm = cert.psi_value(config.kr, x + e_i[0] - e_j[0], y + e_i[1] - e_j[1])
                fmp = cert.psi_value(config.kr, x - e_i[0] + e_j[0], y - e_i[1] + e_j[1])
                fmm = cert.psi_value(config.kr, x - e_i[0] - e_j[0], y - e_i[1] - e_j[1])
                H[i, j] = (fpp - fpm - fmp + fmm) / (4 * h * h)
        assert det == pytest.approx(np.linalg.det(H), rel=1e-3)


def test_assumption_report_duplicate_column(mini_result):
    # a repeated column must produce a (numerically) zero singular value; use a
    # small active set so the stacked matrix is tall
    op, fidelity, config, _ = mini_result
    atoms = [
        DiracAtom(sign=1, z=(3.0,)),
        DipoleAtom(x=(6.5,), y=(7.1,)),
        DiracAtom(sign=1, z=(3.0,)),
    ]
    dup_set = ActiveSet(atoms=atoms, lambdas=np.array([1.0, 1.0, 1.0]))
    dup = SolveResult(
        active_set=dup_set,
        measure=dup_set.measure(config.kr, dim=1),
        history=[],
        termination="converged",
    )
    report = check_linear_assumptions(dup, op, fidelity, config.kr, settings=SETTINGS)
    assert len(report.singular_values) == 3
    assert min(report.singular_values) == pytest.approx(0.0, abs=1e-10)


def test_reports_deterministic(mini_result):
    op, fidelity, config, result = mini_result
    a = check_first_order(result, op, fidelity, config.kr, tol=1e-6, settings=config.maximizer)
    b = check_first_order(result, op, fidelity, config.kr, tol=1e-6, settings=config.maximizer)
    assert a.to_json_obj() == b.to_json_obj()
