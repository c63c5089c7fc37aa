"""State-space realization of the separable aging GPs.

State ordering (fixed throughout the package)::

    [q, dq/dzeta,                       # normalized inverse-capacity block
     r_1, dr_1/dzeta, ..., r_ns, dr_ns/dzeta]   # R0 grid, SOC-major / current-minor

The joint filter prepends the SOC ``z`` to this vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .kernels import GRID_JITTER, MaternSpec, matern_grid_cov

LOG_2PI = np.log(2.0 * np.pi)


def wv_transition(dzeta: float) -> np.ndarray:
    """Exact ``expm(dzeta * F_WV)``; ``F_WV`` is nilpotent so the series stops at first order."""
    if dzeta < 0:
        raise ValueError(f"time step must be non-negative, got {dzeta}")
    return np.array([[1.0, float(dzeta)], [0.0, 1.0]])


def wv_process_noise(dzeta: float, variance: float) -> np.ndarray:
    if dzeta < 0:
        raise ValueError(f"time step must be non-negative, got {dzeta}")
    d = float(dzeta)
    return variance * np.array([[d**3 / 3.0, d**2 / 2.0], [d**2 / 2.0, d]])


def wv_initial_cov(zeta0: float, variance: float) -> np.ndarray:
    """Stationary-free prior covariance of ``(f, f')`` at age ``zeta0``.

    The WV process is pinned at the origin, so this has the same form as the
    process noise accumulated over ``[0, zeta0]``.
    """
    if zeta0 < 0:
        raise ValueError(f"initial age must be non-negative, got {zeta0}")
    return wv_process_noise(zeta0, variance)


def assemble_joint_noise(dzeta: float, K_mat: np.ndarray, variance: float) -> np.ndarray:
    """Block-diagonal GP process noise ``diag(W_WV, K_Mat kron W_WV)``."""
    K_mat = np.atleast_2d(np.asarray(K_mat, dtype=float))
    if K_mat.ndim != 2 or K_mat.shape[0] != K_mat.shape[1]:
        raise ValueError(f"K_Mat must be square, got shape {K_mat.shape}")
    W = wv_process_noise(dzeta, variance)
    return linalg.block_diag(W, np.kron(K_mat, W))


def assemble_initial_cov(zeta0: float, K_mat: np.ndarray, variance: float) -> np.ndarray:
    K_mat = np.atleast_2d(np.asarray(K_mat, dtype=float))
    P = wv_initial_cov(zeta0, variance)
    return linalg.block_diag(P, np.kron(K_mat, P))


@dataclass
class SsmGp:
    """The stacked ``[Q^-1, R0-grid]`` GP in state-space form.

    Parameters
    ----------
    grid : (n_s, 2) array
        Operating points ``(soc, |current|)`` in row-major order.
    matern : MaternSpec
    wv_variance : float
        ``sigma_zeta^2``, shared by both blocks.
    """

    grid: np.ndarray
    matern: MaternSpec
    wv_variance: float
    K_mat: np.ndarray = field(init=False, repr=False)
    K_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.grid = np.atleast_2d(np.asarray(self.grid, dtype=float))
        self.K_mat = matern_grid_cov(self.grid, self.matern, jitter=GRID_JITTER)
        self.K_chol = linalg.cholesky(self.K_mat, lower=True)

    @property
    def n_grid(self) -> int:
        return self.grid.shape[0]

    @property
    def state_dim(self) -> int:
        return 2 + 2 * self.n_grid

    @property
    def value_index(self) -> np.ndarray:
        """Indices of the ``r_k`` value states (not derivatives) within the GP vector."""
        return 2 + 2 * np.arange(self.n_grid)

    def transition(self, dzeta: float) -> np.ndarray:
        return np.kron(np.eye(1 + self.n_grid), wv_transition(dzeta))

    def process_noise(self, dzeta: float) -> np.ndarray:
        return assemble_joint_noise(dzeta, self.K_mat, self.wv_variance)

    def initial_cov(self, zeta0: float) -> np.ndarray:
        return assemble_initial_cov(zeta0, self.K_mat, self.wv_variance)

    def sample_noise(self, dzeta: float, rng: np.random.Generator) -> np.ndarray:
        """Draw ``w ~ N(0, W_GP(dzeta))`` using the Kronecker factorization."""
        W = wv_process_noise(dzeta, self.wv_variance)
        Lw = _psd_sqrt(W)
        out = np.empty(self.state_dim)
        out[:2] = Lw @ rng.standard_normal(2)
        E = rng.standard_normal((2, self.n_grid))
        # vec over (grid, wv) pairs of Lw E K_chol^T is (K_chol kron Lw) vec(E)
        out[2:] = (Lw @ E @ self.K_chol.T).T.ravel()
        return out


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def batch_gp_posterior(
    train_inputs,
    train_targets,
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
    noise_var: float,
    test_inputs,
):
    """Exact GP regression posterior at ``test_inputs`` (zero prior mean).

    ``kernel(A, B)`` must return the covariance matrix between row sets ``A`` and ``B``.
    Used as the reference against which the recursive filter is checked.
    """
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    X = np.asarray(train_inputs, dtype=float)
    Xs = np.asarray(test_inputs, dtype=float)
    y = np.asarray(train_targets, dtype=float).ravel()
    Kss = np.atleast_2d(kernel(Xs, Xs))
    if y.size == 0:
        return np.zeros(Kss.shape[0]), Kss
    Kx = np.atleast_2d(kernel(X, X)) + noise_var * np.eye(y.size)
    Kxs = np.atleast_2d(kernel(X, Xs))
    try:
        cf = linalg.cho_factor(Kx, lower=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("training covariance is singular") from exc
    mean = Kxs.T @ linalg.cho_solve(cf, y)
    cov = Kss - Kxs.T @ linalg.cho_solve(cf, Kxs)
    return mean, 0.5 * (cov + cov.T)


def batch_nlml(train_inputs, train_targets, kernel, noise_var: float) -> float:
    """Negative log marginal likelihood ``-log N(y | 0, K + noise_var I)``."""
    X = np.asarray(train_inputs, dtype=float)
    y = np.asarray(train_targets, dtype=float).ravel()
    Kx = np.atleast_2d(kernel(X, X)) + noise_var * np.eye(y.size)
    L = linalg.cholesky(Kx, lower=True)
    alpha = linalg.solve_triangular(L, y, lower=True)
    return float(0.5 * alpha @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * y.size * LOG_2PI)
