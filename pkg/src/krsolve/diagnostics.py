"""Post-solve checks: first-order optimality of a result and the regularity
conditions backing fast convergence (certificate curvature, column independence,
coefficient margins), plus residual-history rate fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agcg import SolveResult
from .certificate import (
    DualCertificate,
    MaximizerSettings,
    QuadraticFidelity,
    build_certificate,
    maximize_abs_q,
    maximize_psi,
)
from .measures import DipoleAtom, DiracAtom, KRParams


class InsufficientDataError(ValueError):
    """Raised when a history is too short for a rate fit."""


@dataclass
class OptimalityReport:
    """Per-atom certificate gaps and global maxima at a tolerance."""

    tol: float
    dirac_gaps: list[float]  # | |q(z_i)| - alpha | / alpha per active Dirac
    dirac_sign_ok: list[bool]
    dipole_gaps: list[float]  # | Psi(x_j, y_j) - 1 | per active dipole
    max_abs_q_over_alpha: float
    max_psi: float
    passed: bool

    def to_json_obj(self) -> dict:
        return {
            "tol": self.tol,
            "dirac_gaps": self.dirac_gaps,
            "dirac_sign_ok": self.dirac_sign_ok,
            "dipole_gaps": self.dipole_gaps,
            "max_abs_q_over_alpha": self.max_abs_q_over_alpha,
            "max_psi": self.max_psi,
            "passed": self.passed,
        }


@dataclass
class AssumptionReport:
    """Numerical surrogates for the regularity assumptions behind linear convergence."""

    gamma: float
    strong_convexity_note: str
    n_diracs: int
    n_dipoles: int
    dirac_hessians: list[float]  # det of the q Hessian at each Dirac
    dirac_definite: list[bool]  # sign * q curvature negative definite
    dipole_hessians: list[float]  # det of the Psi Hessian at each dipole pair
    singular_values: list[float]  # of the stacked observation-column matrix
    min_coefficient: float
    gram_condition: float
    near_global_maxima_q: int
    near_global_maxima_psi: int

    def to_json_obj(self) -> dict:
        return {
            "gamma": self.gamma,
            "strong_convexity_note": self.strong_convexity_note,
            "n_diracs": self.n_diracs,
            "n_dipoles": self.n_dipoles,
            "dirac_hessians": self.dirac_hessians,
            "dirac_definite": self.dirac_definite,
            "dipole_hessians": self.dipole_hessians,
            "singular_values": self.singular_values,
            "min_coefficient": self.min_coefficient,
            "gram_condition": self.gram_condition,
            "near_global_maxima_q": self.near_global_maxima_q,
            "near_global_maxima_psi": self.near_global_maxima_psi,
        }


def _rebuild_certificate(result: SolveResult, op, fidelity: QuadraticFidelity) -> DualCertificate:
    return build_certificate(op, fidelity, result.measure)


def check_first_order(
    result: SolveResult,
    op,
    fidelity: QuadraticFidelity,
    params: KRParams,
    tol: float,
    settings: MaximizerSettings | None = None,
) -> OptimalityReport:
    """Verify the certificate equalities on the active set and the global bounds."""
    settings = settings or MaximizerSettings()
    cert = _rebuild_certificate(result, op, fidelity)
    dirac_gaps, sign_ok, dipole_gaps = [], [], []
    for atom in result.active_set.atoms:
        if isinstance(atom, DiracAtom):
            qv = cert.q_value(np.asarray(atom.z))
            dirac_gaps.append(float(abs(abs(qv) - params.alpha) / params.alpha))
            sign_ok.append(bool(np.sign(qv) == atom.sign))
        else:
            psi = cert.psi_value(params, np.asarray(atom.x), np.asarray(atom.y))
            dipole_gaps.append(float(abs(psi - 1.0)))
    rep_q = maximize_abs_q(cert, op.domain, settings)
    rep_psi = maximize_psi(cert, params, op.domain, settings)
    max_q = rep_q.value / params.alpha
    passed = bool(
        all(g <= tol for g in dirac_gaps)
        and all(sign_ok)
        and all(g <= tol for g in dipole_gaps)
        and max_q <= 1.0 + tol
        and rep_psi.value <= 1.0 + tol
    )
    return OptimalityReport(
        tol=tol,
        dirac_gaps=dirac_gaps,
        dirac_sign_ok=sign_ok,
        dipole_gaps=dipole_gaps,
        max_abs_q_over_alpha=float(max_q),
        max_psi=float(rep_psi.value),
        passed=passed,
    )


def check_linear_assumptions(
    result: SolveResult,
    op,
    fidelity: QuadraticFidelity,
    params: KRParams,
    settings: MaximizerSettings | None = None,
) -> AssumptionReport:
    settings = settings or MaximizerSettings()
    cert = _rebuild_certificate(result, op, fidelity)
    dirac_dets, dirac_def, dipole_dets = [], [], []
    cols = []
    for atom in result.active_set.atoms:
        cols.append(op.gram_column(atom, params))
        if isinstance(atom, DiracAtom):
            H = cert.q_hess(np.asarray(atom.z))
            dirac_dets.append(float(np.linalg.det(H)))
            dirac_def.append(bool(np.all(np.linalg.eigvalsh(atom.sign * H) < 0)))
        else:
            H = cert.psi_hess(params, np.asarray(atom.x), np.asarray(atom.y))
            dipole_dets.append(float(np.linalg.det(H)))

    if cols:
        mat = np.stack(cols, axis=1)
        if op.kind == "field":
            mat = np.sqrt(op.quad_weights)[:, None] * mat
        svals = [float(s) for s in np.linalg.svd(mat, compute_uv=False)]
        gram = mat.T @ mat
        gram_cond = float(np.linalg.cond(gram))
    else:
        svals = []
        gram_cond = 1.0

    rep_q = maximize_abs_q(cert, op.domain, settings)
    rep_psi = maximize_psi(cert, params, op.domain, settings)
    near_q = sum(1 for _, v in rep_q.maxima if v >= rep_q.value - 1e-6)
    near_psi = sum(1 for _, v in rep_psi.maxima if v >= rep_psi.value - 1e-6)

    lams = result.active_set.lambdas
    return AssumptionReport(
        gamma=fidelity.gamma,
        strong_convexity_note=(
            "quadratic fidelity: strong convexity holds globally with modulus gamma"
        ),
        n_diracs=sum(isinstance(a, DiracAtom) for a in result.active_set.atoms),
        n_dipoles=sum(isinstance(a, DipoleAtom) for a in result.active_set.atoms),
        dirac_hessians=dirac_dets,
        dirac_definite=dirac_def,
        dipole_hessians=dipole_dets,
        singular_values=svals,
        min_coefficient=float(np.min(lams)) if lams.size else 0.0,
        gram_condition=gram_cond,
        near_global_maxima_q=near_q,
        near_global_maxima_psi=near_psi,
    )


def fit_tail_rate(history) -> tuple[float, float]:
    """Least-squares slope of log r_hat over the last third of positive-residual records.

    Returns (slope per iteration, r squared). Requires at least 9 records.
    """
    if len(history) < 9:
        raise InsufficientDataError(f"need at least 9 records, got {len(history)}")
    ks = np.array([rec.k for rec in history], dtype=float)
    rh = np.array([rec.r_hat for rec in history], dtype=float)
    pos = np.flatnonzero(rh > 0)
    if pos.size < 3:
        raise InsufficientDataError("fewer than 3 records with positive residual")
    tail = pos[-max(pos.size // 3, 3):]
    logs = np.log(rh[tail])
    A = np.vstack([ks[tail], np.ones(tail.size)]).T
    coef, *_ = np.linalg.lstsq(A, logs, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - np.mean(logs)) ** 2))
    r_sq = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), r_sq
