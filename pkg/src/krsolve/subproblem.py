"""Nonnegative coefficient fit over the active dictionary.

Minimizes phi(lambda) = gamma/2 lam' G lam - gamma g' lam + gamma/2 ||t||^2 + 1' lam
over lambda >= 0 with accelerated projected gradient (FISTA momentum, restart on
non-monotonicity). The Gram matrix G and linear data g live in the Y-inner
product; assembling them is the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class CoefficientProblem:
    gram: np.ndarray  # (k, k), <K mu_i, K mu_j>_Y
    linear: np.ndarray  # (k,), <K mu_j, target>_Y
    gamma: float
    target_norm_sq: float  # ||target||_Y^2
    lambda_init: np.ndarray = field(default=None)

    def __post_init__(self):
        self.gram = np.atleast_2d(np.asarray(self.gram, dtype=float))
        self.linear = np.atleast_1d(np.asarray(self.linear, dtype=float))
        k = self.linear.shape[0]
        if self.gram.shape != (k, k) and not (k == 0 and self.gram.size == 0):
            raise ValueError(f"gram shape {self.gram.shape} inconsistent with {k} columns")
        if self.lambda_init is None:
            self.lambda_init = np.zeros(k)
        else:
            self.lambda_init = np.atleast_1d(np.asarray(self.lambda_init, dtype=float))
            if self.lambda_init.shape != (k,):
                raise ValueError("lambda_init has wrong length")
            if k and float(np.min(self.lambda_init)) < 0:
                raise ValueError("lambda_init must be nonnegative")

    @property
    def size(self) -> int:
        return self.linear.shape[0]


def objective_value(problem: CoefficientProblem, lam) -> float:
    lam = np.asarray(lam, dtype=float)
    quad = 0.5 * problem.gamma * float(lam @ problem.gram @ lam) if lam.size else 0.0
    lin = -problem.gamma * float(problem.linear @ lam) if lam.size else 0.0
    return quad + lin + 0.5 * problem.gamma * problem.target_norm_sq + float(np.sum(lam))


def _gradient(problem: CoefficientProblem, lam: np.ndarray) -> np.ndarray:
    return problem.gamma * (problem.gram @ lam - problem.linear) + 1.0


def kkt_residual(problem: CoefficientProblem, lam) -> float:
    """Complementarity residual max_j |min(lambda_j, grad_j phi)| at a feasible point."""
    lam = np.asarray(lam, dtype=float)
    if lam.size == 0:
        return 0.0
    return float(np.max(np.abs(np.minimum(lam, _gradient(problem, lam)))))


def _lipschitz_estimate(problem: CoefficientProblem, iters: int = 50) -> float:
    k = problem.size
    if k == 0:
        return 1.0
    rng = np.random.default_rng(0)
    v = rng.normal(size=k)
    v /= np.linalg.norm(v)
    M = problem.gamma * problem.gram
    lam_max = 1.0
    for _ in range(iters):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm <= 1e-300:
            return 1e-12
        lam_max = norm
        v = w / norm
    return 1.05 * lam_max


@dataclass
class CoefficientSolution:
    lam: np.ndarray
    kkt_residual: float
    converged: bool
    iterations: int


def _active_set_polish(M: np.ndarray, c: np.ndarray, x0: np.ndarray, tol: float) -> np.ndarray:
    """Near-exact nonnegative minimizer of 0.5 x'Mx - c'x in Gram form.

    Lawson-Hanson style active-set iteration warm-started from x0. Passive
    subsystems get a relative ridge of ~1e-13 so they stay strictly convex
    even when active columns are numerically dependent; backward-stable solves
    then keep the returned gradient (hence the KKT residual) at float level
    while the flat null directions are resolved arbitrarily, which the true
    objective cannot distinguish anyway.
    """
    k = c.shape[0]
    lam = np.maximum(np.asarray(x0, dtype=float).copy(), 0.0)
    passive = lam > 0
    zero_eps = 1e-14 * max(1.0, float(np.max(lam, initial=0.0)))
    ridge = 1e-14 * max(float(np.trace(M)) / max(k, 1), 1e-300)

    def solve_on(idx):
        A = M[np.ix_(idx, idx)] + ridge * np.eye(idx.size)
        b = c[idx]
        try:
            s = np.linalg.solve(A, b)
            return s + np.linalg.solve(A, b - A @ s)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(A, b, rcond=None)[0]

    def restrict_feasible():
        # pull the passive-set solution back into the nonnegative quadrant
        nonlocal lam, passive
        for _ in range(2 * k + 4):
            idx = np.flatnonzero(passive)
            if idx.size == 0:
                lam[:] = 0.0
                return
            s = solve_on(idx)
            if float(np.min(s)) >= -zero_eps:
                lam[:] = 0.0
                lam[idx] = np.maximum(s, 0.0)
                return
            cur = lam[idx]
            neg = s < 0
            denom = cur[neg] - s[neg]
            alphas = np.divide(cur[neg], denom, out=np.zeros_like(denom), where=denom > 0)
            a = float(np.clip(np.min(alphas), 0.0, 1.0))
            lam[idx] = cur + a * (s - cur)
            dropped = idx[lam[idx] <= zero_eps]
            passive[dropped] = False
            lam[dropped] = 0.0

    restrict_feasible()
    for _ in range(4 * k + 8):
        w = c - M @ lam  # negative gradient of the smooth part
        w[passive] = -np.inf
        j = int(np.argmax(w))
        if not w[j] > tol:
            break
        passive[j] = True
        restrict_feasible()
    return lam


def solve_coefficients(
    problem: CoefficientProblem, tol: float, max_iter: int = 20000
) -> CoefficientSolution:
    """FISTA on the nonnegative cone with monotone restart.

    Returns the best feasible iterate seen, so the objective never exceeds its
    value at `lambda_init`. A near-zero coefficient whose gradient pushes it
    further toward zero is snapped to exactly zero at the end (the snap can
    only decrease the objective at first order).
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    k = problem.size
    if k == 0:
        return CoefficientSolution(np.zeros(0), 0.0, True, 0)

    L = max(_lipschitz_estimate(problem), 1e-12)
    step = 1.0 / L
    M = problem.gamma * problem.gram
    q = problem.gamma * problem.linear
    const = 0.5 * problem.gamma * problem.target_norm_sq

    def phi(v, Mv):
        return 0.5 * float(v @ Mv) - float(q @ v) + const + float(np.sum(v))

    x = problem.lambda_init.copy()
    y = x.copy()
    t_mom = 1.0
    Mx = M @ x
    fx = phi(x, Mx)
    f_init = fx
    converged = False
    iterations = 0
    check_every = 20
    best_kkt = np.inf
    last_improved = 0
    for iterations in range(1, max_iter + 1):
        grad_y = (M @ y) - q + 1.0
        x_new = np.maximum(y - step * grad_y, 0.0)
        Mx_new = M @ x_new
        f_new = phi(x_new, Mx_new)
        # restart on measurable non-monotonicity; objective comparisons below
        # float resolution are noise and must not stall the momentum
        if f_new > fx + 1e-14 * (1.0 + abs(fx)):
            y = x
            t_mom = 1.0
            x_new = np.maximum(x - step * (Mx - q + 1.0), 0.0)
            Mx_new = M @ x_new
            f_new = phi(x_new, Mx_new)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2))
        y = x_new + ((t_mom - 1.0) / t_next) * (x_new - x)
        x, fx, Mx, t_mom = x_new, f_new, Mx_new, t_next
        if iterations % check_every == 0 or iterations == max_iter:
            kkt_now = float(np.max(np.abs(np.minimum(x, Mx - q + 1.0))))
            if kkt_now <= tol:
                converged = True
                break
            if kkt_now < 0.5 * best_kkt:
                best_kkt = kkt_now
                last_improved = iterations
            elif iterations - last_improved >= 3000:
                break  # residual has flatlined: hand over to the exact polish

    if not converged:
        # momentum methods cannot reach this accuracy once the active columns
        # become (numerically) dependent, which clustered atoms routinely cause;
        # finish with an exact active-set solve in Gram form
        polished = _active_set_polish(M, q - 1.0, x, tol=min(tol, 1e-12))
        if phi(polished, M @ polished) <= fx:
            x = polished

    lam = x
    grad = _gradient(problem, lam)
    snap = (lam <= 1e-10 * max(1.0, float(np.max(lam, initial=0.0)))) & (grad > 10 * tol)
    if snap.any():
        lam = lam.copy()
        lam[snap] = 0.0
    if objective_value(problem, lam) > f_init:
        # warm starts stay feasible: never return anything above the start value
        lam = problem.lambda_init.copy()
        converged = False
    res = kkt_residual(problem, lam)
    if res <= tol:
        converged = True
    return CoefficientSolution(lam=lam, kkt_residual=res, converged=converged, iterations=iterations)
