"""Small dense LP solver: two-phase tableau simplex with Bland's anti-cycling rule.

Intended for instances up to a few thousand variables and a few dozen equality
constraints, which is all the norm oracle ever produces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InfeasibleError(RuntimeError):
    """Raised when the equality system admits no nonnegative solution."""


class UnboundedError(RuntimeError):
    """Raised when the objective is unbounded below on the feasible set."""


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    pivots: int


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    piv = tableau[row, col]
    tableau[row] /= piv
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    tableau[:, col] = 0.0
    tableau[row, col] = 1.0
    basis[row] = col


def _run_simplex(tableau, basis, ncols, *, tol, max_pivots):
    """Minimize the cost row in place. Bland's rule: smallest eligible index."""
    pivots = 0
    m = len(basis)
    while True:
        reduced = tableau[-1, :ncols]
        entering = -1
        for j in range(ncols):
            if reduced[j] < -tol:
                entering = j
                break
        if entering < 0:
            return pivots
        col = tableau[:m, entering]
        best_ratio, leaving = None, -1
        for i in range(m):
            if col[i] > tol:
                ratio = tableau[i, -1] / col[i]
                if (
                    best_ratio is None
                    or ratio < best_ratio - tol
                    or (abs(ratio - best_ratio) <= tol and basis[i] < basis[leaving])
                ):
                    best_ratio, leaving = ratio, i
        if leaving < 0:
            raise UnboundedError("LP is unbounded")
        _pivot(tableau, basis, leaving, entering)
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError(f"simplex exceeded {max_pivots} pivots")


def linear_program(c, A, b, *, tol: float = 1e-10, max_pivots: int | None = None) -> LPResult:
    """Solve min c@x subject to A@x = b, x >= 0.

    Redundant equality rows are tolerated (phase one drops them). Raises
    InfeasibleError or UnboundedError when no optimum exists.
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if c.shape != (n,) or b.shape != (m,):
        raise ValueError("inconsistent LP dimensions")
    if n == 0:
        if np.any(np.abs(b) > tol):
            raise InfeasibleError("no variables but nonzero right-hand side")
        return LPResult(x=np.zeros(0), value=0.0, pivots=0)
    if max_pivots is None:
        max_pivots = 1000 + 200 * (m + n)

    scale = max(1.0, float(np.max(np.abs(b))) if m else 1.0)

    # phase one: artificial basis, minimize sum of artificials
    A1 = A.copy()
    b1 = b.copy()
    neg = b1 < 0
    A1[neg] *= -1.0
    b1[neg] *= -1.0

    tableau = np.zeros((m + 1, n + m + 1))
    tableau[:m, :n] = A1
    tableau[:m, n : n + m] = np.eye(m)
    tableau[:m, -1] = b1
    basis = np.arange(n, n + m)
    # cost row for sum of artificials, expressed in the current basis
    tableau[-1, : n + m] = -np.sum(tableau[:m, : n + m], axis=0)
    tableau[-1, n : n + m] = 0.0
    tableau[-1, -1] = -np.sum(b1)

    pivots = _run_simplex(tableau, basis, n + m, tol=tol, max_pivots=max_pivots)
    if -tableau[-1, -1] > 1e-8 * scale:
        raise InfeasibleError(f"phase-one residual {-tableau[-1, -1]:.3e}")

    # drive leftover artificials out of the basis; all-zero rows are redundant
    for i in range(m):
        if basis[i] >= n:
            row = tableau[i, :n]
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > tol:
                _pivot(tableau, basis, i, j)
                pivots += 1
    keep_rows = [i for i in range(m) if basis[i] < n]

    rows = np.array(keep_rows, dtype=int)
    basis = basis[rows]
    m2 = len(rows)
    tableau2 = np.zeros((m2 + 1, n + 1))
    tableau2[:m2, :n] = tableau[rows, :n]
    tableau2[:m2, -1] = tableau[rows, -1]
    # phase two cost row: c reduced by the basic components
    tableau2[-1, :n] = c
    for i in range(m2):
        tableau2[-1] -= c[basis[i]] * tableau2[i]

    pivots += _run_simplex(tableau2, basis, n, tol=tol, max_pivots=max_pivots)

    x = np.zeros(n)
    x[basis] = np.maximum(tableau2[:m2, -1], 0.0)
    return LPResult(x=x, value=float(c @ x), pivots=pivots)
