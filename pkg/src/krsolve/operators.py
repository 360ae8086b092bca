"""Gaussian (heat-kernel) forward operators with analytic adjoint derivatives.

Two measurement models share one interface: finitely many point sensors
(Y = R^S with the Euclidean inner product) and a quadrature discretization of
L^2 on the domain (Y = weighted coefficient space). Any operator exposing
`apply`, `adjoint_value/grad/hess`, `gram_column`, and `y_inner` can be plugged
into the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure, Domain, ExtremalAtom, KRParams, as_measure

# Gaussian tail below double precision; exponent cut for windowed evaluation
_EXP_CUT = 41.5


@dataclass(frozen=True)
class Observation:
    """Measurement vector tagged with the operator kind that produced it."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("observation entries must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.kind not in ("sensor", "field"):
            raise ValueError(f"unknown observation kind {self.kind!r}")


def _as_batch(z, dim: int):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z.reshape(1, 1)
        return z, True
    if z.ndim == 1:
        if dim == 1 and z.shape[0] != 1:
            # 1-d domains accept a flat vector of scalar points
            return z[:, None], False
        return z[None, :], True
    return z, False


class _GaussianKernelMixin:
    """Shared heat-kernel machinery; subclasses provide nodes and Y weights."""

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def scale(self) -> float:
        return (4 * math.pi * self.T) ** (-self.dim / 2)

    def _kernel_matrix(self, points: np.ndarray, z: np.ndarray) -> np.ndarray:
        """G(points_i, z_b) as a (B, P) matrix."""
        diff = z[:, None, :] - points[None, :, :]
        return self.scale * np.exp(-np.sum(diff * diff, axis=-1) / (4 * self.T))

    def apply(self, mu: DiscreteMeasure) -> np.ndarray:
        if mu.is_empty:
            return np.zeros(self.y_dim)
        kern = self._kernel_matrix(mu.locations, self._nodes)
        return kern @ mu.weights

    def gram_column(self, atom: ExtremalAtom, params: KRParams) -> np.ndarray:
        return self.apply(as_measure(atom, params))

    def _adjoint_eval(self, y, z, order: int):
        y = np.asarray(y, dtype=float)
        zb, squeeze = _as_batch(z, self.dim)
        coeff = self._y_coeff(y)
        diff, weighted = self._windowed(coeff, zb)
        val = np.sum(weighted, axis=1)
        if order == 0:
            return val[0] if squeeze else val
        grad = np.einsum("bp,bpn->bn", weighted, diff) / (2 * self.T)
        if order == 1:
            return grad[0] if squeeze else grad
        outer = np.einsum("bpn,bpm->bpnm", diff, diff) / (4 * self.T**2)
        eye = np.eye(self.dim) / (2 * self.T)
        hess = np.einsum("bp,bpnm->bnm", weighted, outer) - val[:, None, None] * eye[None]
        return hess[0] if squeeze else hess

    def adjoint_value(self, y, z):
        """Evaluate K*y at z; `z` may be one point or a batch of points."""
        return self._adjoint_eval(y, z, 0)

    def adjoint_grad(self, y, z):
        return self._adjoint_eval(y, z, 1)

    def adjoint_hess(self, y, z):
        return self._adjoint_eval(y, z, 2)

    def _windowed(self, coeff: np.ndarray, zb: np.ndarray):
        """Per-point node windows: (node - z) diffs and G * coeff weights."""
        nodes = self._nodes
        diff = nodes[None, :, :] - zb[:, None, :]
        gauss = self.scale * np.exp(-np.sum(diff * diff, axis=-1) / (4 * self.T))
        return diff, gauss * coeff[None, :]


class GaussianSensorOperator(_GaussianKernelMixin):
    """Heat-kernel point measurements at fixed sensor locations."""

    def __init__(self, T: float, sensors, domain: Domain):
        if not T > 0:
            raise ValueError(f"diffusion time must be positive, got {T}")
        sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
        if sensors.shape[1] != domain.dim and sensors.shape[0] == domain.dim:
            sensors = sensors.T
        if sensors.shape[0] == 0:
            raise ValueError("at least one sensor is required")
        if not domain.contains(sensors, tol=1e-12):
            raise ValueError("all sensors must lie inside the domain")
        sensors.setflags(write=False)
        self.T = float(T)
        self.domain = domain
        self.sensors = sensors

    kind = "sensor"

    @property
    def _nodes(self) -> np.ndarray:
        return self.sensors

    @property
    def y_dim(self) -> int:
        return self.sensors.shape[0]

    def y_inner(self, u, v) -> float:
        return float(np.dot(u, v))

    def _y_coeff(self, y: np.ndarray) -> np.ndarray:
        return y

    @classmethod
    def evenly_spaced(cls, T: float, count: int, domain: Domain) -> "GaussianSensorOperator":
        """Sensors on a uniform grid including both endpoints (1-d domains)."""
        if domain.dim != 1:
            raise ValueError("evenly spaced sensor layout is defined for 1-d domains")
        locs = np.linspace(domain.lower[0], domain.upper[0], count)[:, None]
        return cls(T, locs, domain)


class GaussianFieldOperator(_GaussianKernelMixin):
    """Heat-kernel measurements in L^2, discretized by composite trapezoid quadrature."""

    def __init__(self, T: float, domain: Domain, num_nodes: int = 2001):
        if not T > 0:
            raise ValueError(f"diffusion time must be positive, got {T}")
        if num_nodes < 2:
            raise ValueError(f"at least 2 quadrature nodes required, got {num_nodes}")
        if domain.dim != 1:
            raise ValueError("field measurements are implemented for 1-d domains")
        self.T = float(T)
        self.domain = domain
        self.num_nodes = int(num_nodes)
        lo, hi = domain.lower[0], domain.upper[0]
        grid = np.linspace(lo, hi, num_nodes)
        h = (hi - lo) / (num_nodes - 1)
        w = np.full(num_nodes, h)
        w[0] = w[-1] = h / 2
        self._grid = grid[:, None]
        self.quad_weights = w
        self._h = h

    kind = "field"

    @property
    def _nodes(self) -> np.ndarray:
        return self._grid

    @property
    def y_dim(self) -> int:
        return self.num_nodes

    def y_inner(self, u, v) -> float:
        return float(np.sum(self.quad_weights * np.asarray(u) * np.asarray(v)))

    def _y_coeff(self, y: np.ndarray) -> np.ndarray:
        return self.quad_weights * y

    def _windowed(self, coeff: np.ndarray, zb: np.ndarray):
        # uniform 1-d grid: only nodes within the kernel's support window matter
        radius = math.sqrt(4 * self.T * _EXP_CUT)
        width = int(math.ceil(2 * radius / self._h)) + 2
        if width >= self.num_nodes:
            return super()._windowed(coeff, zb)
        lo = self.domain.lower[0]
        start = np.clip(
            np.floor((zb[:, 0] - radius - lo) / self._h).astype(int),
            0,
            self.num_nodes - width,
        )
        idx = start[:, None] + np.arange(width)[None, :]
        nodes = self._grid[:, 0][idx]
        diff = nodes - zb[:, 0][:, None]
        gauss = self.scale * np.exp(-diff * diff / (4 * self.T))
        return diff[:, :, None], gauss * coeff[idx]
