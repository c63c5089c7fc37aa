"""Covariance functions for the aging GPs.

Two kernels are combined as a separable product:

* a Wiener-velocity (integrated Brownian motion) kernel over aging time, and
* a Matern-3/2 kernel over the operating point ``s = (z, |I|)``.

Operating points are 2-vectors ``(soc, current)``. Currents are always used in
absolute value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT3 = np.sqrt(3.0)

#: Relative diagonal jitter added to the Matern grid covariance before factorizing.
GRID_JITTER = 1e-8


@dataclass(frozen=True)
class MaternSpec:
    """Matern-3/2 hyperparameters over ``(soc, |current|)``."""

    variance: float
    lengthscale_soc: float
    lengthscale_current: float

    def __post_init__(self):
        for name in ("variance", "lengthscale_soc", "lengthscale_current"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"MaternSpec.{name} must be positive and finite, got {value!r}")

    @property
    def inverse_lengthscales(self) -> np.ndarray:
        return np.array([1.0 / self.lengthscale_soc, 1.0 / self.lengthscale_current])


@dataclass(frozen=True)
class WienerVelocitySpec:
    """Wiener-velocity kernel; the spectral density of the driving noise equals ``variance``."""

    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"WienerVelocitySpec.variance must be positive, got {self.variance!r}")

    @property
    def spectral_density(self) -> float:
        return self.variance

    @property
    def state_dim(self) -> int:
        return 2


def _as_points(s) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(s, dtype=float))
    if pts.shape[-1] != 2:
        raise ValueError(f"operating points must have 2 coordinates (soc, current), got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("operating points must be finite")
    out = pts.copy()
    out[:, 1] = np.abs(out[:, 1])
    return out


def scaled_distance(s, s_prime, spec: MaternSpec) -> np.ndarray:
    """Pairwise anisotropic distances ``d`` between two sets of operating points."""
    a = _as_points(s) * spec.inverse_lengthscales
    b = _as_points(s_prime) * spec.inverse_lengthscales
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def matern32_from_distance(d, variance: float) -> np.ndarray:
    r = SQRT3 * np.asarray(d, dtype=float)
    return variance * (1.0 + r) * np.exp(-r)


def matern32_cov(s, s_prime, spec: MaternSpec) -> float:
    """Matern-3/2 covariance between two operating points."""
    d = scaled_distance(s, s_prime, spec)
    if d.shape != (1, 1):
        raise ValueError("matern32_cov expects single operating points; use matern_cross_cov for sets")
    return float(matern32_from_distance(d, spec.variance)[0, 0])


def matern_cross_cov(points_a, points_b, spec: MaternSpec) -> np.ndarray:
    """Matern-3/2 covariance matrix between two point sets."""
    return matern32_from_distance(scaled_distance(points_a, points_b, spec), spec.variance)


def matern_cross_cov_dsoc(grid, s, spec: MaternSpec) -> np.ndarray:
    """Derivative of ``k(grid_k, s)`` with respect to the SOC coordinate of ``s``.

    Uses ``d/dd [(1 + sqrt3 d) exp(-sqrt3 d)] = -3 d exp(-sqrt3 d)`` and
    ``dd/dz = (z - z_k) / (l_z^2 d)``, which combine to a form that is regular at d = 0.
    """
    g = _as_points(grid)
    p = _as_points(s)
    d = scaled_distance(g, p, spec)
    dz = p[None, :, 0] - g[:, None, 0]
    return -3.0 * spec.variance * np.exp(-SQRT3 * d) * dz / spec.lengthscale_soc**2


def wv_cov(zeta, zeta_prime, variance: float = 1.0):
    """Wiener-velocity covariance ``sigma^2 (min^3/3 + |a-b| min^2/2)``.

    Broadcasts over array arguments. Ages must be non-negative.
    """
    a = np.asarray(zeta, dtype=float)
    b = np.asarray(zeta_prime, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("aging times must be non-negative")
    m = np.minimum(a, b)
    out = variance * (m**3 / 3.0 + np.abs(a - b) * m**2 / 2.0)
    return float(out) if out.ndim == 0 else out


def matern_grid_cov(grid, spec: MaternSpec, jitter: float = 0.0) -> np.ndarray:
    """Matern covariance ``K_Mat`` over a grid of operating points.

    ``jitter`` is relative to the kernel variance; pass :data:`GRID_JITTER`
    for a matrix that is about to be factorized.
    """
    g = _as_points(grid)
    if g.shape[0] == 0:
        raise ValueError("operating grid is empty")
    if len(np.unique(g, axis=0)) != g.shape[0]:
        raise ValueError("operating grid contains duplicate points")
    K = matern_cross_cov(g, g, spec)
    K = 0.5 * (K + K.T)
    if jitter:
        K[np.diag_indices_from(K)] += jitter * spec.variance
    return K


def operating_grid(n_soc: int, n_current: int = 1, current_range=(0.0, 1.0)) -> np.ndarray:
    """Evenly spaced ``(soc, |current|)`` grid in row-major (SOC-major, current-minor) order.

    With ``n_current == 1`` the single current level is the midpoint of ``current_range``.
    """
    if n_soc < 2:
        raise ValueError("need at least two SOC levels")
    if n_current < 1:
        raise ValueError("need at least one current level")
    lo, hi = sorted(abs(float(c)) for c in current_range)
    socs = np.linspace(0.0, 1.0, n_soc)
    currents = np.array([0.5 * (lo + hi)]) if n_current == 1 else np.linspace(lo, hi, n_current)
    zz, ii = np.meshgrid(socs, currents, indexing="ij")
    return np.column_stack([zz.ravel(), ii.ravel()])
