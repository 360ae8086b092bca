"""Dual certificate q = -K* grad F(K mu), the surface Psi, and their global maximization.

The maximizers use a deterministic multistart scheme: seed grid, batched
projected gradient ascent with Armijo backtracking, then a few perturbation
rounds around the maxima found (basin-hopping style). All evaluations are
vectorized over starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure, Domain, KRParams

_DIAG_FACTOR = 1e-8  # diagonal tube radius as a fraction of diam(domain)


class DiagonalSingularityError(ValueError):
    """Raised when Psi derivatives are requested too close to the diagonal."""


@dataclass(frozen=True)
class QuadraticFidelity:
    """F(v) = gamma/2 * ||v - target||_Y^2."""

    gamma: float
    target: np.ndarray

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"fidelity weight must be positive, got {self.gamma}")
        target = np.asarray(self.target, dtype=float)
        target.setflags(write=False)
        object.__setattr__(self, "target", target)

    def value(self, op, y_vec) -> float:
        r = np.asarray(y_vec) - self.target
        return 0.5 * self.gamma * op.y_inner(r, r)


def build_certificate(op, fidelity: QuadraticFidelity, mu: DiscreteMeasure) -> "DualCertificate":
    residual = op.apply(mu) - fidelity.target
    return DualCertificate(op=op, gamma=fidelity.gamma, residual=residual)


class DualCertificate:
    """q(z) = -gamma * K*(residual)(z), with analytic derivatives.

    Evaluation methods accept a single point (n,) or a batch (B, n) and return
    matching shapes.
    """

    def __init__(self, op, gamma: float, residual):
        self.op = op
        self.gamma = float(gamma)
        self.residual = np.asarray(residual, dtype=float)

    @property
    def domain(self) -> Domain:
        return self.op.domain

    def q_value(self, z):
        return -self.gamma * self.op.adjoint_value(self.residual, z)

    def q_grad(self, z):
        return -self.gamma * self.op.adjoint_grad(self.residual, z)

    def q_hess(self, z):
        return -self.gamma * self.op.adjoint_hess(self.residual, z)

    # ------------------------------------------------------------------ Psi

    @staticmethod
    def _pair_batch(x, y):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        X = np.atleast_2d(x)
        Y = np.atleast_2d(np.asarray(y, dtype=float))
        if X.shape != Y.shape:
            raise ValueError("x and y batches must have identical shapes")
        return X, Y, squeeze

    def psi_value(self, params: KRParams, x, y):
        X, Y, squeeze = self._pair_batch(x, y)
        diff = X - Y
        d = np.sqrt(np.sum(diff * diff, axis=1))
        denom = params.beta + d**params.p
        vals = (self.q_value(X) - self.q_value(Y)) / denom
        return float(vals[0]) if squeeze else vals

    def psi_grad(self, params: KRParams, x, y):
        X, Y, squeeze = self._pair_batch(x, y)
        self._check_off_diagonal(X, Y)
        g = self._psi_grad_batch(params, X, Y)
        return g[0] if squeeze else g

    def psi_hess(self, params: KRParams, x, y):
        X, Y, squeeze = self._pair_batch(x, y)
        self._check_off_diagonal(X, Y)
        h = self._psi_hess_batch(params, X, Y)
        return h[0] if squeeze else h

    def _check_off_diagonal(self, X, Y):
        d = np.sqrt(np.sum((X - Y) ** 2, axis=1))
        delta = _DIAG_FACTOR * self.domain.diameter
        if np.any(d < delta):
            raise DiagonalSingularityError(
                f"pair separation below the diagonal tube radius {delta:.3e}"
            )

    def _psi_grad_batch(self, params: KRParams, X, Y):
        p = params.p
        diff = X - Y
        d = np.sqrt(np.sum(diff * diff, axis=1))
        denom = params.beta + d**p
        num = self.q_value(X) - self.q_value(Y)
        g_dist = p * d[:, None] ** (p - 2) * diff  # gradient of |x-y|^p in x
        scale = (num / denom**2)[:, None]
        gx = self.q_grad(X) / denom[:, None] - scale * g_dist
        gy = -self.q_grad(Y) / denom[:, None] + scale * g_dist
        return np.concatenate([gx, gy], axis=1)

    def _psi_hess_batch(self, params: KRParams, X, Y):
        p = params.p
        B, n = X.shape
        diff = X - Y
        d = np.sqrt(np.sum(diff * diff, axis=1))
        denom = params.beta + d**p
        num = self.q_value(X) - self.q_value(Y)

        grad_n = np.concatenate([self.q_grad(X), -self.q_grad(Y)], axis=1)
        g_dist = p * d[:, None] ** (p - 2) * diff
        grad_d = np.concatenate([g_dist, -g_dist], axis=1)

        hess_n = np.zeros((B, 2 * n, 2 * n))
        hess_n[:, :n, :n] = self.q_hess(X)
        hess_n[:, n:, n:] = -self.q_hess(Y)

        eye = np.eye(n)
        hd = p * d[:, None, None] ** (p - 2) * eye[None] + p * (p - 2) * d[
            :, None, None
        ] ** (p - 4) * np.einsum("bi,bj->bij", diff, diff)
        hess_d = np.zeros((B, 2 * n, 2 * n))
        hess_d[:, :n, :n] = hd
        hess_d[:, :n, n:] = -hd
        hess_d[:, n:, :n] = -hd
        hess_d[:, n:, n:] = hd

        inv = 1.0 / denom
        cross = np.einsum("bi,bj->bij", grad_n, grad_d) + np.einsum(
            "bi,bj->bij", grad_d, grad_n
        )
        outer_d = np.einsum("bi,bj->bij", grad_d, grad_d)
        return (
            hess_n * inv[:, None, None]
            - cross * (inv**2)[:, None, None]
            - hess_d * (num * inv**2)[:, None, None]
            + 2 * outer_d * (num * inv**3)[:, None, None]
        )


@dataclass(frozen=True)
class MaximizerSettings:
    """Multistart search configuration; defaults sized for 1-d experiment domains."""

    grid_points: int = 256
    pair_grid: int = 64
    top_pairs: int = 512
    perturb_rounds: int = 3
    noise_frac: float = 0.02  # sigma = noise_frac * diam
    max_steps: int = 200
    grad_tol: float = 1e-10
    armijo_shrink: float = 0.5
    dedupe_tol: float = 1e-6
    max_maxima: int = 64
    # drop starts climbing toward clearly sub-global peaks once the leaders settle
    value_cut: float = 0.3
    value_cut_after: int = 25
    seed: int = 0


@dataclass(frozen=True)
class MaximizerReport:
    """Outcome of one global maximization."""

    argmax: np.ndarray
    value: float
    n_starts: int
    n_converged: int
    maxima: tuple  # ((point tuple, value), ...) sorted by decreasing value

    def pair(self) -> tuple[np.ndarray, np.ndarray]:
        half = self.argmax.shape[0] // 2
        return self.argmax[:half], self.argmax[half:]


def _box_projected_gradient(X, G, lo, hi):
    pg = G.copy()
    pg[(X <= lo) & (G < 0)] = 0.0
    pg[(X >= hi) & (G > 0)] = 0.0
    return pg


def _ascend(f, grad, hess, project, lo, hi, X0, settings: MaximizerSettings, diam: float):
    """Batched projected ascent: Newton steps where the Hessian certifies a peak,
    Armijo backtracking on gradient-normalized steps otherwise.

    A start counts as settled when its projected gradient drops below the
    tolerance or when no step of any size yields a floating-point measurable
    ascent (the practical optimum); `settled` reports that mask.
    """
    X = project(np.array(X0, dtype=float))
    fX = f(X)
    B, dim = X.shape
    step = np.full(B, 0.1 * diam)
    frozen = np.zeros(B, dtype=bool)
    settled = np.zeros(B, dtype=bool)
    tiny_move = 1e-14 * diam
    for it in range(settings.max_steps):
        if it >= settings.value_cut_after:
            best = float(np.max(fX))
            cut = best - settings.value_cut * max(abs(best), 1e-12)
            frozen |= fX < cut
        act = np.flatnonzero(~frozen)
        if act.size == 0:
            break
        G = np.zeros_like(X)
        G[act] = grad(X[act])
        pg = _box_projected_gradient(X[act], G[act], lo, hi)
        done = np.sqrt(np.sum(pg * pg, axis=1)) <= settings.grad_tol
        frozen[act[done]] = True
        settled[act[done]] = True
        act = act[~done]
        if act.size == 0:
            break

        # Newton move wherever the Hessian certifies a strict local peak
        took_newton = np.zeros(act.size, dtype=bool)
        H = hess(X[act])
        eigs = np.linalg.eigvalsh(H)
        concave = eigs[:, -1] < -1e-12
        if concave.any():
            rows = act[concave]
            move = np.linalg.solve(H[concave], -G[rows][..., None])[..., 0]
            lengths = np.sqrt(np.sum(move * move, axis=1))
            clip_len = np.minimum(lengths, 0.5 * diam)
            move *= np.divide(
                clip_len, lengths, out=np.ones_like(lengths), where=lengths > 0
            )[:, None]
            cand = project(X[rows] + move)
            fc = f(cand)
            real = cand - X[rows]
            ok = (
                (fc > fX[rows])
                & (np.sqrt(np.sum(real * real, axis=1)) >= tiny_move)
            )
            X[rows[ok]] = cand[ok]
            fX[rows[ok]] = fc[ok]
            took_newton[concave] = ok

        arm = np.flatnonzero(~took_newton)
        if arm.size:
            rows0 = act[arm]
            norms = np.sqrt(np.sum(G[rows0] * G[rows0], axis=1))
            dirs = G[rows0] / np.maximum(norms, 1e-300)[:, None]
            s = step[rows0].copy()
            accepted = np.zeros(arm.size, dtype=bool)
            for _bt in range(90):
                rem = np.flatnonzero(~accepted)
                if rem.size == 0:
                    break
                rows = rows0[rem]
                cand = project(X[rows] + s[rem, None] * dirs[rem])
                fc = f(cand)
                move = cand - X[rows]
                armijo = fc >= fX[rows] + 1e-4 * np.sum(G[rows] * move, axis=1)
                moved = np.sum(move * move, axis=1) > 0
                ok = (fc > fX[rows]) & armijo & moved
                X[rows[ok]] = cand[ok]
                fX[rows[ok]] = fc[ok]
                accepted[rem[ok]] = True
                s[rem[~ok]] *= settings.armijo_shrink
            # no measurable ascent at any step size: stationary to precision
            stuck = ~accepted
            if stuck.any():
                frozen[rows0[stuck]] = True
                settled[rows0[stuck]] = True
            small = accepted & (s < tiny_move)
            if small.any():
                frozen[rows0[small]] = True
                settled[rows0[small]] = True
            step[rows0] = np.minimum(np.where(accepted, 2 * s, s), diam)
    return X, fX, settled


def _dedupe(points: np.ndarray, values: np.ndarray, tol: float, cap: int):
    order = np.argsort(-values, kind="stable")
    kept_pts, kept_vals = [], []
    for i in order:
        p = points[i]
        if any(np.max(np.abs(p - q)) <= tol for q in kept_pts):
            continue
        kept_pts.append(p)
        kept_vals.append(float(values[i]))
        if len(kept_pts) >= cap:
            break
    return kept_pts, kept_vals


def _multistart(f, grad, hess, project, lo, hi, seeds, settings: MaximizerSettings, diam: float):
    rng = np.random.default_rng(settings.seed)
    X, fX, settled = _ascend(f, grad, hess, project, lo, hi, seeds, settings, diam)
    n_converged = int(np.sum(settled))
    # keep the settled endpoints as maxima candidates; the best point always counts
    keep = settled.copy()
    keep[int(np.argmax(fX))] = True
    pts, vals = _dedupe(X[keep], fX[keep], settings.dedupe_tol, settings.max_maxima)
    for _ in range(settings.perturb_rounds):
        base = np.array(pts)
        noise = rng.normal(0.0, settings.noise_frac * diam, base.shape)
        Xp, fp, _ = _ascend(f, grad, hess, project, lo, hi, base + noise, settings, diam)
        pts, vals = _dedupe(
            np.vstack([np.array(pts), Xp]),
            np.concatenate([np.array(vals), fp]),
            settings.dedupe_tol,
            settings.max_maxima,
        )
    maxima = tuple((tuple(map(float, p)), v) for p, v in zip(pts, vals))
    return MaximizerReport(
        argmax=np.array(pts[0]),
        value=float(vals[0]),
        n_starts=seeds.shape[0],
        n_converged=n_converged,
        maxima=maxima,
    )


def _domain_seed_grid(domain: Domain, total: int) -> np.ndarray:
    per_axis = max(2, int(round(total ** (1 / domain.dim))))
    axes = [
        np.linspace(lo, hi, per_axis)
        for lo, hi in zip(domain.lower, domain.upper)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def maximize_abs_q(cert: DualCertificate, domain: Domain, settings: MaximizerSettings) -> MaximizerReport:
    """Global maximization of |q| over the box by deterministic multistart ascent."""
    lo = np.asarray(domain.lower)
    hi = np.asarray(domain.upper)

    def f(Z):
        return np.abs(cert.q_value(Z))

    def grad(Z):
        s = np.sign(cert.q_value(Z))
        return s[:, None] * cert.q_grad(Z)

    def hess(Z):
        s = np.sign(cert.q_value(Z))
        return s[:, None, None] * cert.q_hess(Z)

    project = lambda Z: np.clip(Z, lo, hi)
    seeds = _domain_seed_grid(domain, settings.grid_points)
    return _multistart(f, grad, hess, project, lo, hi, seeds, settings, domain.diameter)


def maximize_psi(
    cert: DualCertificate, params: KRParams, domain: Domain, settings: MaximizerSettings
) -> MaximizerReport:
    """Global maximization of Psi over the product box, avoiding the diagonal tube."""
    n = domain.dim
    lo = np.concatenate([domain.lower, domain.lower])
    hi = np.concatenate([domain.upper, domain.upper])
    delta = _DIAG_FACTOR * domain.diameter

    def split(U):
        return U[:, :n], U[:, n:]

    def f(U):
        X, Y = split(U)
        return cert.psi_value(params, X, Y)

    def grad(U):
        X, Y = split(U)
        return cert._psi_grad_batch(params, X, Y)

    def hess(U):
        X, Y = split(U)
        return cert._psi_hess_batch(params, X, Y)

    def project(U):
        U = np.clip(U, lo, hi)
        X, Y = U[:, :n], U[:, n:]
        diff = X - Y
        d = np.sqrt(np.sum(diff * diff, axis=1))
        close = d < delta
        if np.any(close):
            dirs = np.zeros_like(diff[close])
            nz = d[close] > 0
            dirs[nz] = diff[close][nz] / d[close][nz, None]
            dirs[~nz, 0] = 1.0
            mid = 0.5 * (X[close] + Y[close])
            X = X.copy()
            Y = Y.copy()
            X[close] = mid + 0.5 * delta * dirs
            Y[close] = mid - 0.5 * delta * dirs
            U = np.clip(np.concatenate([X, Y], axis=1), lo, hi)
        return U

    per_axis = settings.pair_grid if n == 1 else max(2, int(round(math.sqrt(settings.pair_grid))))
    base = _domain_seed_grid(domain, per_axis**n)
    m = base.shape[0]
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    pairs = np.concatenate([base[ii.ravel()], base[jj.ravel()]], axis=1)
    sep = np.sqrt(np.sum((pairs[:, :n] - pairs[:, n:]) ** 2, axis=1))
    pairs = pairs[sep >= delta]
    scores = f(pairs)
    top = np.argsort(-scores, kind="stable")[: settings.top_pairs]
    seeds = pairs[top]
    return _multistart(f, grad, hess, project, lo, hi, seeds, settings, domain.diameter)
