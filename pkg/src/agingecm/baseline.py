"""Random-walk dual-estimation benchmark.

Two coupled EKFs share one voltage innovation: a scalar SOC filter, and a
parameter filter over ``theta = (Q^-1, R0)`` whose prior dynamics are a
random walk. ``R0`` has no SOC or current dependence and the cross-covariance
between SOC and parameters is dropped, which is what separates this from the
joint GP co-estimator. The output uses the same :class:`HealthEstimate`
layout as the GP method (``R0`` repeated over the grid) so results can be
compared column by column.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ecm import CellConfig, OcvCurve, SECONDS_PER_HOUR
from .errors import DataError
from .estimator import FilterOptions, HealthEstimate, JointModel, initial_soc, SECONDS_PER_DAY
from .kernels import operating_grid
from .params import HyperParams
from .ssm import LOG_2PI

logger = logging.getLogger(__name__)

DIVERGENCE_Z = 10.0
DIVERGENCE_RUN = 20
THETA_FLOOR = 1e-6
# relative per-day random-walk standard deviations searched by ``tune_dual``
DEFAULT_GRID_Q = (1e-5, 1e-4, 1e-3, 1e-2)
DEFAULT_GRID_R = (1e-4, 1e-3, 1e-2, 1e-1)


@dataclass
class RwParams:
    """Parameter-filter state and its random-walk noise.

    ``theta = (Q^-1 [1/Ah], R0 [Ohm])``; ``noise`` holds the per-day variances
    ``(q_Q, q_R)`` added to ``P`` for every elapsed day, both within and
    between segments.
    """

    theta: np.ndarray
    P: np.ndarray
    noise: tuple

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        self.P = np.asarray(self.P, dtype=float).copy()
        if self.theta.shape != (2,) or self.P.shape != (2, 2):
            raise ValueError("theta must be a 2-vector and P a 2x2 matrix")
        if np.any(self.theta <= 0):
            raise ValueError("theta components must be positive")
        if len(self.noise) != 2 or min(self.noise) < 0:
            raise ValueError("random-walk noise must be two non-negative variances")

    @classmethod
    def from_priors(cls, cell: CellConfig, rel_noise=(1e-3, 1e-2), rel_init_std=(0.05, 0.5)) -> "RwParams":
        """Start at the cell priors with relative initial spreads and relative per-day noise."""
        theta = np.array([cell.inv_capacity_prior, cell.resistance_prior])
        P = np.diag((np.asarray(rel_init_std) * theta) ** 2)
        noise = tuple(float(v) for v in (np.asarray(rel_noise) * theta) ** 2)
        return cls(theta, P, noise)

    def copy(self) -> "RwParams":
        return RwParams(self.theta, self.P, self.noise)


@dataclass
class DualResult:
    estimate: HealthEstimate
    nlml: float
    theta_track: np.ndarray
    theta_var: np.ndarray
    diverged: list = field(default_factory=list)
    rw: RwParams | None = None


def _dual_segment(seg, z0: float, pz0: float, rw: RwParams, ocv: OcvCurve, noise_var: float,
                  theta_floor: np.ndarray):
    """Filter one segment in place on ``rw``; returns ``(nlml, diverged)``."""
    t = np.asarray(seg.t, dtype=float)
    cur = np.asarray(seg.current, dtype=float)
    volts = np.asarray(seg.voltage, dtype=float)
    qinv, r0 = float(rw.theta[0]), float(rw.theta[1])
    p11, p12, p22 = float(rw.P[0, 0]), float(rw.P[0, 1]), float(rw.P[1, 1])
    nq, nr = rw.noise
    z, pz = z0, pz0
    dz_dq, dz_dr = 0.0, 0.0
    nlml = 0.0
    run = 0
    diverged = False
    for i in range(t.size):
        current = cur[i]
        if i > 0:
            dt = t[i] - t[i - 1]
            if not dt > 0:
                raise DataError(f"segment at age {seg.age}: time stamps must increase")
            dd = dt / SECONDS_PER_DAY
            p11 += nq * dd
            p22 += nr * dd
            c = current * dt / SECONDS_PER_HOUR
            z += qinv * c
            # total sensitivity of the predicted SOC to the parameters
            dz_dq += c
        v0, hz = ocv.value_and_slope(z)
        e = volts[i] - (v0 + r0 * current)
        # parameter-filter Jacobian through the SOC sensitivity
        h1 = hz * dz_dq
        h2 = current + hz * dz_dr
        s_z = hz * hz * pz + noise_var
        u1 = p11 * h1 + p12 * h2
        u2 = p12 * h1 + p22 * h2
        s_th = h1 * u1 + h2 * u2 + noise_var
        s_tot = s_z + s_th - noise_var
        nlml += 0.5 * e * e / s_tot + 0.5 * (LOG_2PI + math.log(s_tot))
        if abs(e) / math.sqrt(s_tot) > DIVERGENCE_Z:
            run += 1
            if run >= DIVERGENCE_RUN:
                diverged = True
        else:
            run = 0
        # state update
        lz = pz * hz / s_z
        z += lz * e
        pz *= 1.0 - lz * hz
        # parameter update
        l1, l2 = u1 / s_th, u2 / s_th
        qinv += l1 * e
        r0 += l2 * e
        p11 -= l1 * u1
        p12 -= l1 * u2
        p22 -= l2 * u2
        dz_dq -= lz * h1
        dz_dr -= lz * h2
        if qinv < theta_floor[0]:
            qinv = theta_floor[0]
        if r0 < theta_floor[1]:
            r0 = theta_floor[1]
    if not all(map(math.isfinite, (qinv, r0, p11, p12, p22, nlml))):
        raise DataError(f"dual filter produced non-finite values in segment at age {seg.age}")
    rw.theta[:] = (qinv, r0)
    rw.P[:] = ((p11, p12), (p12, p22))
    return nlml, diverged


def run_dual_estimation(segments: Sequence, rw: RwParams, ocv: OcvCurve, cell: CellConfig,
                        noise_var: float, options: FilterOptions | None = None, warn: bool = True) -> DualResult:
    """Run the dual filter over sorted segments; ``rw`` is not modified.

    SOC is re-initialized per segment exactly as in the GP co-estimator.
    Between segments ``P`` grows by ``noise * gap_days``. Segments whose
    innovations stay beyond the divergence z-score for a sustained run are
    flagged in ``diverged`` and reported in one log line (a warning unless
    ``warn`` is false).
    """
    if not segments:
        raise DataError("no segments to filter")
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    ages = np.array([float(s.age) for s in segments])
    if np.any(np.diff(ages) <= 0):
        raise DataError("segments must be sorted by strictly increasing age")
    options = options or FilterOptions()
    # only used for SOC initialization, so the hyperparameters are placeholders
    init_model = JointModel(HyperParams(noise_var=noise_var), cell, ocv, options)
    state = rw.copy()
    floor = THETA_FLOOR * rw.theta
    total = 0.0
    thetas, variances, ends, flags = [], [], [], []
    last_end = None
    for seg in segments:
        if last_end is not None:
            gap = max(seg.age - last_end, 0.0)
            state.P[0, 0] += state.noise[0] * gap
            state.P[1, 1] += state.noise[1] * gap
        z0 = initial_soc(init_model, seg)
        nlml, div = _dual_segment(seg, z0, options.soc_init_std**2, state, ocv, noise_var, floor)
        total += nlml
        flags.append(div)
        thetas.append(state.theta.copy())
        variances.append(np.diag(state.P).copy())
        t = np.asarray(seg.t, dtype=float)
        last_end = seg.age + (t[-1] - t[0]) / SECONDS_PER_DAY
        ends.append(last_end)
    thetas = np.array(thetas)
    variances = np.array(variances)
    grid = operating_grid(cell.n_soc, cell.n_current, cell.current_range)
    n = len(segments)
    qinv = thetas[:, 0]
    est = HealthEstimate(
        ages=np.array(ends),
        flags=[getattr(s, "role", "train") for s in segments],
        capacity_mean=1.0 / qinv,
        capacity_var=variances[:, 0] / qinv**4,
        r0_mean=np.repeat(thetas[:, 1:2], grid.shape[0], axis=1),
        r0_var=np.repeat(variances[:, 1:2], grid.shape[0], axis=1),
        grid=grid,
        matern=None,
        cell=cell,
        gp_means=None,
        gp_covs=None,
        meta={"method": "random-walk dual EKF", "rw_noise": list(rw.noise)},
    )
    if any(flags):
        bad = [float(a) for a, f in zip(ages, flags) if f]
        est.meta["diverged_segments"] = bad
        logger.log(logging.WARNING if warn else logging.INFO, "dual filter diverged in %d of %d segments (ages %s)",
                   len(bad), n, ", ".join(f"{a:.1f}" for a in bad))
    return DualResult(estimate=est, nlml=total, theta_track=thetas, theta_var=variances, diverged=flags, rw=rw)


def tune_dual(segments: Sequence, ocv: OcvCurve, cell: CellConfig, noise_var: float,
              grid_q: Sequence[float] = DEFAULT_GRID_Q, grid_r: Sequence[float] = DEFAULT_GRID_R,
              options: FilterOptions | None = None, rel_init_std=(0.05, 0.5)):
    """Pick the random-walk noise by grid search on the training NLML.

    Grid values are per-day standard deviations relative to the priors.
    Returns ``(best_rw, table)`` where ``table`` rows are
    ``(rel_q, rel_r, nlml)``; failed runs score ``inf``.
    """
    table = []
    best, best_nlml = None, np.inf
    for rq, rr in itertools.product(grid_q, grid_r):
        rw = RwParams.from_priors(cell, (rq, rr), rel_init_std)
        try:
            nlml = run_dual_estimation(segments, rw, ocv, cell, noise_var, options, warn=False).nlml
        except DataError as exc:
            logger.info("dual run failed for noise (%g, %g): %s", rq, rr, exc)
            nlml = np.inf
        table.append((rq, rr, nlml))
        if nlml < best_nlml:
            best, best_nlml = rw, nlml
    if best is None:
        raise DataError("every random-walk noise setting failed")
    return best, table


__all__ = ["RwParams", "DualResult", "run_dual_estimation", "tune_dual", "DEFAULT_GRID_Q", "DEFAULT_GRID_R"]
