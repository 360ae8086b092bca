"""Outer conditional-gradient loop: insert extremal atoms, refit weights, prune.

Each iteration builds the dual certificate of the current iterate, globally
maximizes |q| and Psi, inserts the winning extremal atom (Dirac when
max|q|/alpha wins ties, dipole otherwise), re-solves the nonnegative
coefficient problem warm-started, and removes atoms whose weight fell to zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .certificate import (
    DualCertificate,
    MaximizerReport,
    MaximizerSettings,
    QuadraticFidelity,
    build_certificate,
    maximize_abs_q,
    maximize_psi,
)
from .measures import (
    DipoleAtom,
    DiracAtom,
    DiscreteMeasure,
    Domain,
    ExtremalAtom,
    KRParams,
    as_measure,
)
from .subproblem import CoefficientProblem, solve_coefficients


class ExtremalityViolationError(RuntimeError):
    """A selected dipole fell outside its validity window: maximizer failure."""


@dataclass
class ActiveSet:
    """Ordered extremal atoms with strictly positive weights."""

    atoms: list[ExtremalAtom] = field(default_factory=list)
    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.lambdas = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if len(self.atoms) != self.lambdas.shape[0]:
            raise ValueError("atoms and lambdas must have matching length")

    @property
    def size(self) -> int:
        return len(self.atoms)

    def measure(self, params: KRParams, dim: int = 1) -> DiscreteMeasure:
        mu = DiscreteMeasure.empty(dim)
        for atom, lam in zip(self.atoms, self.lambdas):
            mu = mu + as_measure(atom, params).scale(float(lam))
        return mu


@dataclass(frozen=True)
class SolverConfig:
    kr: KRParams
    epsilon: float = 1e-10
    max_outer_iterations: int = 500
    maximizer: MaximizerSettings = MaximizerSettings()
    subproblem_tol: float | None = None  # None: min(1e-12*(1+phi(0)), 0.1*epsilon)
    subproblem_max_iter: int = 20000
    prune_threshold: float = 1e-12
    coalesce_radius: float | None = None  # None: 1e-7 * diam(domain)
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class IterateRecord:
    k: int
    surrogate: float
    max_abs_q_over_alpha: float
    max_psi: float
    n_atoms: int
    inserted_kind: str  # "dirac" | "dipole" | "none"
    r_hat: float = float("nan")  # filled once the final surrogate is known
    time_s: float = 0.0


@dataclass
class SolveResult:
    active_set: ActiveSet
    measure: DiscreteMeasure
    history: list[IterateRecord]
    termination: str  # "converged" | "max-iter"

    @property
    def iterations(self) -> int:
        return max(len(self.history) - 1, 0)


def stopping_check(max_abs_q: float, max_psi: float, params: KRParams, epsilon: float) -> bool:
    """Certificate-based optimality test: max(max|q|/alpha, max Psi) <= 1 + epsilon."""
    return max(max_abs_q / params.alpha, max_psi) <= 1.0 + epsilon


def _decide_insertion(
    rep_q: MaximizerReport,
    rep_psi: MaximizerReport,
    params: KRParams,
    epsilon: float,
    q_sign: float,
) -> ExtremalAtom | None:
    if stopping_check(rep_q.value, rep_psi.value, params, epsilon):
        return None
    if rep_q.value / params.alpha >= rep_psi.value:
        return DiracAtom(sign=int(np.sign(q_sign)) or 1, z=tuple(rep_q.argmax))
    x, y = rep_psi.pair()
    return DipoleAtom(x=tuple(x), y=tuple(y))


def insert_candidate(
    cert: DualCertificate,
    params: KRParams,
    domain: Domain,
    settings: MaximizerSettings,
    epsilon: float,
) -> tuple[ExtremalAtom | None, float, float]:
    """Solve the linear subproblem over the extremal set.

    Returns (atom or None, max|q|, max Psi). When a dipole wins but violates
    its validity window, the Psi search is retried once with a denser start
    set; a second violation raises ExtremalityViolationError.
    """
    rep_q = maximize_abs_q(cert, domain, settings)
    rep_psi = maximize_psi(cert, params, domain, settings)
    q_sign = cert.q_value(rep_q.argmax)
    atom = _decide_insertion(rep_q, rep_psi, params, epsilon, q_sign)
    if isinstance(atom, DipoleAtom):
        sep = atom.separation ** params.p
        if not sep < params.dipole_window:
            dense = replace(
                settings,
                grid_points=4 * settings.grid_points,
                pair_grid=2 * settings.pair_grid,
                top_pairs=2 * settings.top_pairs,
                perturb_rounds=settings.perturb_rounds + 2,
                seed=settings.seed + 500_009,
            )
            rep_q = maximize_abs_q(cert, domain, dense)
            rep_psi = maximize_psi(cert, params, domain, dense)
            q_sign = cert.q_value(rep_q.argmax)
            atom = _decide_insertion(rep_q, rep_psi, params, epsilon, q_sign)
            if isinstance(atom, DipoleAtom) and not atom.separation ** params.p < params.dipole_window:
                raise ExtremalityViolationError(
                    f"dipole separation^p {atom.separation ** params.p:.6g} "
                    f">= {params.dipole_window:.6g} after retry"
                )
    return atom, rep_q.value, rep_psi.value


def _same_atom(a: ExtremalAtom, b: ExtremalAtom, radius: float) -> bool:
    if isinstance(a, DiracAtom) and isinstance(b, DiracAtom):
        return a.sign == b.sign and float(np.linalg.norm(np.subtract(a.z, b.z))) <= radius
    if isinstance(a, DipoleAtom) and isinstance(b, DipoleAtom):
        return (
            float(np.linalg.norm(np.subtract(a.x, b.x))) <= radius
            and float(np.linalg.norm(np.subtract(a.y, b.y))) <= radius
        )
    return False


class _LoopState:
    """Owns the active set plus its cached observation columns and Gram data."""

    def __init__(self, op, fidelity: QuadraticFidelity, params: KRParams):
        self.op = op
        self.fidelity = fidelity
        self.params = params
        self.atoms: list[ExtremalAtom] = []
        self.lambdas = np.zeros(0)
        self.cols: list[np.ndarray] = []
        self.gram = np.zeros((0, 0))
        self.linear = np.zeros(0)
        self.target_norm_sq = op.y_inner(fidelity.target, fidelity.target)

    def add_atom(self, atom: ExtremalAtom) -> None:
        col = self.op.gram_column(atom, self.params)
        cross = np.array([self.op.y_inner(col, c) for c in self.cols])
        k = len(self.cols)
        gram = np.zeros((k + 1, k + 1))
        gram[:k, :k] = self.gram
        gram[:k, k] = cross
        gram[k, :k] = cross
        gram[k, k] = self.op.y_inner(col, col)
        self.gram = gram
        self.linear = np.append(self.linear, self.op.y_inner(col, self.fidelity.target))
        self.cols.append(col)
        self.atoms.append(atom)
        self.lambdas = np.append(self.lambdas, 0.0)

    def keep(self, mask: np.ndarray) -> None:
        idx = np.flatnonzero(mask)
        self.atoms = [self.atoms[i] for i in idx]
        self.cols = [self.cols[i] for i in idx]
        self.lambdas = self.lambdas[idx]
        self.gram = self.gram[np.ix_(idx, idx)]
        self.linear = self.linear[idx]

    def observation(self) -> np.ndarray:
        if not self.cols:
            return np.zeros(self.op.y_dim)
        return np.stack(self.cols, axis=1) @ self.lambdas

    def surrogate(self) -> float:
        return self.fidelity.value(self.op, self.observation()) + float(np.sum(self.lambdas))

    def solve(self, tol: float, max_iter: int):
        problem = CoefficientProblem(
            gram=self.gram,
            linear=self.linear,
            gamma=self.fidelity.gamma,
            target_norm_sq=self.target_norm_sq,
            lambda_init=self.lambdas,
        )
        sol = solve_coefficients(problem, tol=tol, max_iter=max_iter)
        self.lambdas = sol.lam
        return sol

    def prune(self, threshold: float) -> None:
        if self.lambdas.size:
            self.keep(self.lambdas > threshold)


def run(
    config: SolverConfig,
    op,
    fidelity: QuadraticFidelity,
    initial: ActiveSet | None = None,
) -> SolveResult:
    """Run the solver until the certificate test passes or iterations run out."""
    params = config.kr
    domain = op.domain
    coalesce_radius = (
        config.coalesce_radius
        if config.coalesce_radius is not None
        else 1e-7 * domain.diameter
    )

    state = _LoopState(op, fidelity, params)
    phi0 = 0.5 * fidelity.gamma * state.target_norm_sq
    sub_tol = (
        config.subproblem_tol
        if config.subproblem_tol is not None
        else min(1e-12 * (1.0 + abs(phi0)), 0.1 * config.epsilon)
    )

    if initial is not None and initial.size:
        for atom, lam in zip(initial.atoms, initial.lambdas):
            state.add_atom(atom)
            state.lambdas[-1] = lam
        state.solve(sub_tol, config.subproblem_max_iter)
        state.prune(config.prune_threshold)

    history: list[IterateRecord] = []
    termination = "max-iter"
    effective_tol = sub_tol
    t_start = time.perf_counter()
    k = 0
    while True:
        cert = DualCertificate(
            op=op, gamma=fidelity.gamma, residual=state.observation() - fidelity.target
        )
        settings_k = replace(
            config.maximizer, seed=config.maximizer.seed + 1_000_003 * config.seed + 2 * k
        )
        atom, max_q, max_psi = insert_candidate(
            cert, params, domain, settings_k, config.epsilon
        )
        record = IterateRecord(
            k=k,
            surrogate=state.surrogate(),
            max_abs_q_over_alpha=max_q / params.alpha,
            max_psi=max_psi,
            n_atoms=len(state.atoms),
            inserted_kind="none",
            time_s=time.perf_counter() - t_start,
        )
        history.append(record)
        if atom is None:
            termination = "converged"
            break
        if k >= config.max_outer_iterations:
            break

        merged = False
        for existing in state.atoms:
            if _same_atom(atom, existing, coalesce_radius):
                merged = True
                break
        if merged:
            # the violation sits on an existing atom: the weights were not
            # accurate enough for the outer tolerance, so tighten and refit
            effective_tol = max(effective_tol * 1e-2, 1e-13)
        else:
            state.add_atom(atom)
        record.inserted_kind = "dirac" if isinstance(atom, DiracAtom) else "dipole"
        sol = state.solve(effective_tol, config.subproblem_max_iter)
        if not sol.converged:
            # the requested accuracy sits below the float floor of this Gram;
            # asking for it again would only burn the full iteration budget
            effective_tol = max(effective_tol, 1.1 * sol.kkt_residual)
        state.prune(config.prune_threshold)
        k += 1

    final_surrogate = history[-1].surrogate
    for rec in history:
        rec.r_hat = rec.surrogate - final_surrogate

    active = ActiveSet(atoms=list(state.atoms), lambdas=state.lambdas.copy())
    return SolveResult(
        active_set=active,
        measure=active.measure(params, dim=domain.dim),
        history=history,
        termination=termination,
    )
