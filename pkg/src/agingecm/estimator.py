"""Joint EKF co-estimation of SOC and the aging GPs, plus smoothing and extrapolation.

Within a discharge segment the joint state ``[z, q, q', r_1, r_1', ...]`` is
filtered against every terminal-voltage sample. Between segments only the GP
block is carried forward (by the Wiener-velocity transition over the gap) and
SOC is re-initialized. The negative log marginal likelihood of the voltage
innovations is accumulated on the way and is the objective for
:mod:`agingecm.hyperopt`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .ecm import CellConfig, OcvCurve, SECONDS_PER_HOUR
from .errors import DataError, NumericalError
from .kernels import GRID_JITTER, MaternSpec, SQRT3, operating_grid
from .params import HyperParams
from .ssm import LOG_2PI, SsmGp, wv_initial_cov, wv_process_noise, wv_transition

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
DEFAULT_ZETA0 = 1.0


@dataclass(frozen=True)
class FilterOptions:
    """Knobs of the co-estimation filter that are not GP hyperparameters.

    soc_init
        ``"full"`` starts every segment at ``soc_full_value`` (full-DoD data after a CV hold),
        ``"rest_voltage"`` inverts the OCV at the first (rest) sample and
        ``"segment"`` uses the SOC recorded on the segment.
    update_form
        ``"joseph"`` (default) or ``"as_printed"``; the latter adds ``L e L^T`` instead of
        ``L R L^T`` and repairs the covariance when it loses definiteness.
    """

    soc_init: str = "full"
    soc_full_value: float = 1.0
    soc_init_std: float = 0.02
    soc_process_var: float = 0.0
    rest_fraction: float = 1.0 / 50.0
    update_form: str = "joseph"
    readout_jitter: float = GRID_JITTER
    input_uncertainty: bool = True
    soc_clamp: tuple = (-0.05, 1.05)
    hygiene_stride: int = 0

    def __post_init__(self):
        if self.soc_init not in ("full", "rest_voltage", "segment"):
            raise ValueError(f"unknown soc_init mode {self.soc_init!r}")
        if self.update_form not in ("joseph", "as_printed"):
            raise ValueError(f"unknown update_form {self.update_form!r}")
        if not self.soc_init_std > 0:
            raise ValueError("soc_init_std must be positive")


@dataclass
class JointState:
    """Joint mean and covariance; index 0 is SOC, the rest follows :mod:`agingecm.ssm` ordering."""

    x: np.ndarray
    P: np.ndarray

    @property
    def z(self) -> float:
        return float(self.x[0])

    @property
    def x_inv_capacity(self) -> np.ndarray:
        return self.x[1:3]

    @property
    def x_resistance(self) -> np.ndarray:
        return self.x[3:]

    @property
    def gp_mean(self) -> np.ndarray:
        return self.x[1:]

    @property
    def gp_cov(self) -> np.ndarray:
        return self.P[1:, 1:]

    def copy(self) -> "JointState":
        return JointState(self.x.copy(), self.P.copy())


@dataclass
class FilterDiagnostics:
    nlml: float = 0.0
    innovations: list = field(default_factory=list)
    innovation_vars: list = field(default_factory=list)
    segment_nlml: list = field(default_factory=list)
    soc_clamps: int = 0
    psd_repairs: int = 0
    n_updates: int = 0
    max_asymmetry: float = 0.0
    min_eig_ratio: float = np.inf

    @property
    def normalized_innovations(self) -> np.ndarray:
        return np.asarray(self.innovations) / np.sqrt(np.asarray(self.innovation_vars))

    def check_hygiene(self, P: np.ndarray):
        self.max_asymmetry = max(self.max_asymmetry, float(np.max(np.abs(P - P.T))))
        tr = float(np.trace(P))
        if tr > 0:
            self.min_eig_ratio = min(self.min_eig_ratio, float(linalg.eigvalsh(P)[0]) / tr)

    def merge(self, other: "FilterDiagnostics") -> None:
        self.nlml += other.nlml
        self.innovations += other.innovations
        self.innovation_vars += other.innovation_vars
        self.segment_nlml += other.segment_nlml
        self.soc_clamps += other.soc_clamps
        self.psd_repairs += other.psd_repairs
        self.n_updates += other.n_updates
        self.max_asymmetry = max(self.max_asymmetry, other.max_asymmetry)
        self.min_eig_ratio = min(self.min_eig_ratio, other.min_eig_ratio)


@dataclass
class HealthEstimate:
    """Per-age posterior of capacity and the resistance surface.

    ``ages`` are in days. ``r0_mean``/``r0_var`` have shape ``(n_ages, n_grid)``
    on ``grid``. ``gp_means``/``gp_covs`` keep the GP block so off-grid
    readouts (:meth:`r0_profile`) stay possible.
    """

    ages: np.ndarray
    flags: list
    capacity_mean: np.ndarray
    capacity_var: np.ndarray
    r0_mean: np.ndarray
    r0_var: np.ndarray
    grid: np.ndarray
    matern: MaternSpec
    cell: CellConfig
    gp_means: np.ndarray
    gp_covs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ages)

    def r0_profile(self, index: int, soc, current=None, jitter: float = GRID_JITTER):
        """Mean and variance of ``R0`` at arbitrary SOC values for age ``index``.

        Reads the gridded GP through :func:`spatial_weights`; the variance is the
        propagated state variance plus the interpolation residual.
        """
        if self.gp_means is None or self.matern is None:
            raise ValueError("this estimate carries no GP state to read off-grid values from")
        soc = np.atleast_1d(np.asarray(soc, dtype=float))
        if current is None:
            current = self.grid[0, 1]
        readout = _Readout(self.grid, self.matern, self.cell.n_current, jitter)
        vals = self.gp_means[index][2::2]
        Pvv = self.gp_covs[index][2::2, 2::2]
        r0 = self.cell.resistance_prior
        mean = np.empty(soc.size)
        var = np.empty(soc.size)
        for n, z in enumerate(soc):
            w, _, resid = readout.weights(z, current)
            mean[n] = r0 * (1.0 + w @ vals)
            var[n] = r0**2 * (w @ Pvv @ w + resid)
        return mean, var


# ---------------------------------------------------------------------------
# Off-grid readout of the resistance GP


class _Readout:
    """Precomputed Matern quantities for ``w(s) = K_Mat^-1 k(grid, s)``."""

    def __init__(self, grid, matern: MaternSpec, n_current: int, jitter: float = GRID_JITTER):
        self.grid = np.asarray(grid, dtype=float)
        self.matern = matern
        self.use_current = n_current > 1
        self.fixed_current = self.grid[0, 1]
        self._gz = self.grid[:, 0].copy()
        self._gi = self.grid[:, 1].copy()
        self._inv_lz = 1.0 / matern.lengthscale_soc
        self._inv_li = 1.0 / matern.lengthscale_current
        K = _matern(self._dist2(self.grid[:, 0][:, None], self.grid[:, 1][:, None]), matern.variance)
        K = 0.5 * (K + K.T)
        K[np.diag_indices_from(K)] += jitter * matern.variance
        self.cho = linalg.cho_factor(K, lower=True)
        self.K_inv = linalg.cho_solve(self.cho, np.eye(K.shape[0]))

    def _dist2(self, z, current):
        dz = (z - self._gz) * self._inv_lz
        if self.use_current:
            di = (np.abs(current) - self._gi) * self._inv_li
            return dz * dz + di * di
        return dz * dz

    def weights(self, z: float, current: float):
        """Return ``(w, dw/dz, residual_variance)`` at operating point ``(z, |current|)``."""
        var = self.matern.variance
        sd = SQRT3 * np.sqrt(self._dist2(z, current))
        e = np.exp(-sd)
        k = var * (1.0 + sd) * e
        dk = (-3.0 * var * self._inv_lz**2) * e * (z - self._gz)
        w = self.K_inv @ k
        dw = self.K_inv @ dk
        resid = max(var - k @ w, 0.0)
        return w, dw, resid


def _matern(d2, variance):
    d = np.sqrt(d2)
    return variance * (1.0 + SQRT3 * d) * np.exp(-SQRT3 * d)


def spatial_weights(s, grid, K_mat, spec: MaternSpec) -> np.ndarray:
    """Interpolation weights ``K_Mat^-1 k(grid, s)`` for one operating point ``s = (z, |I|)``."""
    from .kernels import matern_cross_cov

    k = matern_cross_cov(grid, np.atleast_2d(s), spec)[:, 0]
    try:
        return linalg.solve(np.asarray(K_mat, dtype=float), k, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise NumericalError("grid covariance is singular; add jitter") from exc


# ---------------------------------------------------------------------------
# Joint model


class JointModel:
    """Everything the EKF needs that stays fixed across steps of one run."""

    def __init__(self, hp: HyperParams, cell: CellConfig, ocv: OcvCurve,
                 options: FilterOptions | None = None, zeta0: float | None = None):
        self.hp = hp
        self.cell = cell
        self.ocv = ocv
        self.options = options or FilterOptions()
        self.grid = operating_grid(cell.n_soc, cell.n_current, cell.current_range)
        self.ssm = SsmGp(self.grid, hp.matern, hp.wv_variance)
        self.readout = _Readout(self.grid, hp.matern, cell.n_current, self.options.readout_jitter)
        self.q0 = cell.inv_capacity_prior
        self.r0 = cell.resistance_prior
        self.n_grid = self.grid.shape[0]
        self.dim = 1 + self.ssm.state_dim
        self.zeta0 = zeta0
        self._noise_cache: dict = {}

    def micro_noise(self, dd: float):
        """``(W_WV, K_Mat * W_WV[a, b] for each a, b)`` for a within-segment step, memoized."""
        hit = self._noise_cache.get(dd)
        if hit is None:
            W = wv_process_noise(dd, self.hp.wv_variance)
            K = self.ssm.K_mat
            hit = (W, W[0, 0] * K, W[0, 1] * K, W[1, 1] * K)
            if len(self._noise_cache) < 64:
                self._noise_cache[dd] = hit
        return hit

    def initial_gp(self, zeta0: float):
        if not zeta0 > 0:
            raise DataError(f"first segment age must be positive (got {zeta0}); offset ages from cell birth")
        return np.zeros(self.ssm.state_dim), self.ssm.initial_cov(zeta0)

    def resistance(self, x: np.ndarray, z: float, current: float):
        """``R0`` mean, ``dR0/dz``, weights and readout residual at the current state."""
        w, dw, resid = self.readout.weights(z, current)
        vals = x[3::2]
        return self.r0 * (1.0 + w @ vals), self.r0 * (dw @ vals), w, resid

    def predict_voltage(self, x: np.ndarray, current: float) -> float:
        z = float(x[0])
        r, *_ = self.resistance(x, z, current)
        return self.ocv(z) + r * current


def evaluate_r0(model: JointModel, joint: JointState, s) -> tuple[float, float]:
    """Mean and variance of ``R0`` at ``s = (z, I)`` including SOC input uncertainty.

    The variance is the state variance of the interpolated surface, plus the
    Matern interpolation residual, plus the first-order input-uncertainty term
    ``(dR0/dz)^2 P_z``.
    """
    z, current = float(s[0]), float(s[1])
    mean, dr_dz, w, resid = model.resistance(joint.x, z, current)
    Pvv = joint.P[3::2, 3::2]
    var = model.r0**2 * (w @ Pvv @ w + resid) + dr_dz**2 * joint.P[0, 0]
    return float(mean), float(max(var, 0.0))


def _propagate(model: JointModel, joint: JointState, current: float, dt: float) -> None:
    """In-place prediction over ``dt`` seconds: Coulomb step plus GP micro-propagation."""
    x, P = joint.x, joint.P
    dd = dt / SECONDS_PER_DAY
    c = model.q0 * current * dt / SECONDS_PER_HOUR
    x[0] += c * (1.0 + x[1])
    x[1::2] += dd * x[2::2]
    # G P G^T with G = [[1, c, 0...], [0, A], [0, 0, I kron A]]
    P[0, :] += c * P[1, :]
    P[1::2, :] += dd * P[2::2, :]
    P[:, 0] += c * P[:, 1]
    P[:, 1::2] += dd * P[:, 2::2]
    P[0, 0] += model.options.soc_process_var
    if dd > 0:
        W, K00, K01, K11 = model.micro_noise(dd)
        P[1:3, 1:3] += W
        P[3::2, 3::2] += K00
        P[3::2, 4::2] += K01
        P[4::2, 3::2] += K01
        P[4::2, 4::2] += K11


def _update(model: JointModel, joint: JointState, current: float, voltage: float,
            diag: FilterDiagnostics) -> tuple[float, float]:
    """In-place measurement update; returns ``(innovation, innovation_variance)``."""
    x, P = joint.x, joint.P
    opts = model.options
    z = float(x[0])
    r_mean, dr_dz, w, resid = model.resistance(x, z, current)
    v0, dv0 = model.ocv.value_and_slope(z)
    h = v0 + r_mean * current

    hz = dv0 + current * dr_dz
    hr = current * model.r0 * w
    u = P[:, 0] * hz + P[:, 3::2] @ hr
    hph = hz * u[0] + hr @ u[3::2]

    sigma_r0 = model.r0**2 * resid
    if opts.input_uncertainty:
        sigma_r0 += dr_dz**2 * P[0, 0]
    R = current**2 * sigma_r0 + model.hp.noise_var
    S = hph + R
    if not np.isfinite(S) or S <= 0:
        raise NumericalError(f"innovation variance is not positive (S={S!r})")
    e = voltage - h
    if not np.isfinite(e):
        raise NumericalError("non-finite innovation")
    L = u / S
    x += L * e

    if opts.update_form == "joseph":
        # (I - LH) P (I - LH)^T + L R L^T collapses to this rank-one form for the optimal gain
        P -= np.outer(u, u) / S
    else:
        H = np.zeros_like(x)
        H[0] = hz
        H[3::2] = hr
        IKH = np.eye(x.size) - np.outer(L, H)
        P[:] = IKH.T @ P @ IKH + e * np.outer(L, L)
        P[:] = 0.5 * (P + P.T)
        dmin = np.min(np.diag(P))
        if dmin < 0 or linalg.eigvalsh(P)[0] < -1e-12 * np.trace(np.abs(P)):
            wv, V = linalg.eigh(P)
            P[:] = (V * np.clip(wv, 0.0, None)) @ V.T
            diag.psd_repairs += 1
    P[:] = 0.5 * (P + P.T)

    zc, clamped = _clamp(x[0], opts.soc_clamp)
    if clamped:
        x[0] = zc
        diag.soc_clamps += 1
    return float(e), float(S)


def _clamp(z, band):
    lo, hi = band
    if z < lo:
        return lo, True
    if z > hi:
        return hi, True
    return z, False


def ekf_step(model: JointModel, joint: JointState, current: float, dt: float, voltage: float,
             diag: FilterDiagnostics | None = None):
    """One predict/update cycle. Returns ``(joint', innovation, S, nlml_increment)``.

    ``dt`` is in seconds and must be positive; ``joint`` is not modified.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    diag = diag if diag is not None else FilterDiagnostics()
    out = joint.copy()
    _propagate(model, out, current, dt)
    e, S = _update(model, out, current, voltage, diag)
    return out, e, S, 0.5 * e * e / S + 0.5 * (LOG_2PI + np.log(S))


# ---------------------------------------------------------------------------
# Segment loop


def initial_soc(model: JointModel, segment) -> float:
    opts = model.options
    if opts.soc_init == "full":
        return opts.soc_full_value
    if opts.soc_init == "segment":
        if getattr(segment, "soc0", None) is None:
            raise DataError("soc_init='segment' needs segments carrying an initial SOC")
        return float(segment.soc0)
    i_max = np.max(np.abs(segment.current))
    v0 = float(segment.voltage[0])
    if abs(segment.current[0]) > opts.rest_fraction * i_max:
        # no rest sample before the discharge; remove the prior IR drop instead
        v0 -= segment.current[0] * model.r0
        logger.warning("segment at age %.3f has no rest sample; SOC initialized from IR-corrected voltage",
                       segment.age)
    return model.ocv.invert(v0)


def filter_segment(model: JointModel, gp_mean: np.ndarray, gp_cov: np.ndarray, segment,
                   diag: FilterDiagnostics) -> JointState:
    """Run the joint EKF through one segment starting from the given GP prior."""
    D = model.dim
    x = np.empty(D)
    x[0] = initial_soc(model, segment)
    x[1:] = gp_mean
    P = np.zeros((D, D))
    P[0, 0] = model.options.soc_init_std**2
    P[1:, 1:] = gp_cov
    joint = JointState(x, P)

    t = np.asarray(segment.t, dtype=float)
    current = np.asarray(segment.current, dtype=float)
    voltage = np.asarray(segment.voltage, dtype=float)
    stride = model.options.hygiene_stride
    nlml = 0.0
    for i in range(t.size):
        if i > 0:
            dt = t[i] - t[i - 1]
            if not dt > 0:
                raise DataError(f"segment at age {segment.age}: time stamps must increase")
            _propagate(model, joint, current[i], dt)
        e, S = _update(model, joint, current[i], voltage[i], diag)
        nlml += 0.5 * e * e / S + 0.5 * (LOG_2PI + np.log(S))
        diag.innovations.append(e)
        diag.innovation_vars.append(S)
        if stride and i % stride == 0:
            diag.check_hygiene(joint.P)
    if not np.all(np.isfinite(joint.x)):
        raise NumericalError(f"filter diverged in segment at age {segment.age}")
    diag.check_hygiene(joint.P)
    diag.n_updates += t.size
    diag.segment_nlml.append(nlml)
    diag.nlml += nlml
    return joint


@dataclass
class CoestimationResult:
    """Filtered GP snapshots at the end of each segment, ready for smoothing."""

    model: JointModel
    ages: np.ndarray
    roles: list
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    diagnostics: FilterDiagnostics
    zeta0: float
    segment_ends: np.ndarray = None

    def smoothed(self):
        return rts_smooth(self.filtered_means, self.filtered_covs, self.segment_ends,
                          self.model.ssm.transition, self.model.ssm.process_noise)

    def estimate(self, smooth: bool = True) -> HealthEstimate:
        if smooth:
            means, covs = self.smoothed()
        else:
            means, covs = self.filtered_means, self.filtered_covs
        return to_health_estimate(self.model, self.segment_ends, means, covs, list(self.roles))


def _segment_span_days(segment) -> float:
    t = np.asarray(segment.t, dtype=float)
    return float(t[-1] - t[0]) / SECONDS_PER_DAY


def run_coestimation(segments: Sequence, hp: HyperParams, cell: CellConfig, ocv: OcvCurve,
                     options: FilterOptions | None = None, state=None,
                     model: JointModel | None = None) -> CoestimationResult:
    """Filter a sorted sequence of discharge segments.

    ``state`` may carry ``(gp_mean, gp_cov, end_age)`` from a previous call so a
    long history can be processed in pieces; the accumulated NLML is additive
    across such calls.
    """
    if not segments:
        raise DataError("no segments to filter")
    model = model or JointModel(hp, cell, ocv, options)
    ages = np.array([float(s.age) for s in segments])
    if np.any(np.diff(ages) <= 0):
        raise DataError("segments must be sorted by strictly increasing age")
    diag = FilterDiagnostics()
    if state is None:
        zeta0 = ages[0]
        gp_mean, gp_cov = model.initial_gp(zeta0)
        last_end = zeta0
    else:
        gp_mean, gp_cov, last_end = state
        zeta0 = None
    means, covs, ends = [], [], []
    ssm = model.ssm
    for seg in segments:
        t = np.asarray(seg.t)
        if t.size == 0:
            raise DataError(f"empty segment at age {seg.age}")
        gap = seg.age - last_end
        if gap < -1e-9:
            raise DataError(f"segment at age {seg.age} starts before the previous one ended ({last_end})")
        gap = max(gap, 0.0)
        if gap > 0:
            A = ssm.transition(gap)
            gp_mean = A @ gp_mean
            gp_cov = A @ gp_cov @ A.T + ssm.process_noise(gap)
            gp_cov = 0.5 * (gp_cov + gp_cov.T)
        joint = filter_segment(model, gp_mean, gp_cov, seg, diag)
        gp_mean = joint.gp_mean.copy()
        gp_cov = joint.gp_cov.copy()
        last_end = seg.age + _segment_span_days(seg)
        means.append(gp_mean)
        covs.append(gp_cov)
        ends.append(last_end)
    return CoestimationResult(
        model=model,
        ages=ages,
        roles=[getattr(s, "role", "train") for s in segments],
        filtered_means=np.array(means),
        filtered_covs=np.array(covs),
        diagnostics=diag,
        zeta0=zeta0 if zeta0 is not None else float("nan"),
        segment_ends=np.array(ends),
    )


# ---------------------------------------------------------------------------
# Linear GP filter (no ECM) used for exactness checks and smoothing


def kalman_filter_nodes(times, H_list, y_list, noise_var, transition, process_noise, m0, P0):
    """Linear Kalman filter over observation nodes.

    ``times`` are strictly increasing node times; the prior ``(m0, P0)`` holds at
    ``times[0]``. At node ``j`` the vector ``y_list[j]`` is observed through
    ``H_list[j]`` with i.i.d. noise ``noise_var``. Returns filtered means and
    covariances and the accumulated NLML.
    """
    m, P = np.asarray(m0, float).copy(), np.asarray(P0, float).copy()
    means, covs = [], []
    nlml = 0.0
    t_prev = times[0]
    for t, H, y in zip(times, H_list, y_list):
        dt = t - t_prev
        if dt < 0:
            raise ValueError("node times must be increasing")
        if dt > 0:
            A = transition(dt)
            m = A @ m
            P = A @ P @ A.T + process_noise(dt)
        H = np.atleast_2d(H)
        y = np.atleast_1d(y)
        for h, yk in zip(H, y):
            u = P @ h
            S = h @ u + noise_var
            e = yk - h @ m
            m = m + u * (e / S)
            P = P - np.outer(u, u) / S
            P = 0.5 * (P + P.T)
            nlml += 0.5 * e * e / S + 0.5 * (LOG_2PI + np.log(S))
        means.append(m.copy())
        covs.append(P.copy())
        t_prev = t
    return np.array(means), np.array(covs), nlml


def rts_smooth(filtered_means, filtered_covs, times, transition, process_noise):
    """Rauch-Tung-Striebel fixed-interval smoother over aging nodes.

    ``transition(dt)`` and ``process_noise(dt)`` describe the prior dynamics
    between consecutive node ``times``.
    """
    if filtered_means is None or filtered_covs is None:
        raise ValueError("smoothing needs stored filtered means and covariances")
    ms = np.array(filtered_means, dtype=float, copy=True)
    Ps = np.array(filtered_covs, dtype=float, copy=True)
    n = len(ms)
    if len(Ps) != n or len(times) != n:
        raise ValueError("means, covariances and times must have equal length")
    for k in range(n - 2, -1, -1):
        dt = times[k + 1] - times[k]
        A = transition(dt)
        m_pred = A @ filtered_means[k]
        P_pred = A @ filtered_covs[k] @ A.T + process_noise(dt)
        P_pred = 0.5 * (P_pred + P_pred.T)
        # gain G = P_k A^T P_pred^-1, solved rather than inverted
        try:
            cf = linalg.cho_factor(P_pred, lower=True)
            G = linalg.cho_solve(cf, A @ filtered_covs[k]).T
        except linalg.LinAlgError:
            G = filtered_covs[k] @ A.T @ linalg.pinvh(P_pred)
        ms[k] = filtered_means[k] + G @ (ms[k + 1] - m_pred)
        Pk = filtered_covs[k] + G @ (Ps[k + 1] - P_pred) @ G.T
        Ps[k] = 0.5 * (Pk + Pk.T)
    return ms, Ps


# ---------------------------------------------------------------------------
# Readouts and extrapolation


def to_health_estimate(model: JointModel, ages, means, covs, flags) -> HealthEstimate:
    means = np.atleast_2d(means)
    covs = np.asarray(covs)
    q0, r0 = model.q0, model.r0
    q = means[:, 0]
    var_q = covs[:, 0, 0]
    one_q = 1.0 + q
    if np.any(one_q <= 0):
        raise NumericalError("inverse-capacity estimate became non-positive")
    cap = 1.0 / (q0 * one_q)
    # first-order propagation through Q = 1 / (q0 (1 + q))
    cap_var = var_q / (q0**2 * one_q**4)
    r_idx = np.arange(2, means.shape[1], 2)
    r0_mean = r0 * (1.0 + means[:, r_idx])
    r0_var = r0**2 * np.clip(covs[:, r_idx, r_idx], 0.0, None)
    return HealthEstimate(
        ages=np.asarray(ages, dtype=float),
        flags=list(flags),
        capacity_mean=cap,
        capacity_var=np.clip(cap_var, 0.0, None),
        r0_mean=r0_mean,
        r0_var=r0_var,
        grid=model.grid,
        matern=model.hp.matern,
        cell=model.cell,
        gp_means=means,
        gp_covs=covs,
    )


def predict_future(model: JointModel, gp_mean, gp_cov, start_age: float, horizons) -> HealthEstimate:
    """Propagate the final GP state forward without updates.

    ``horizons`` are day offsets from ``start_age``; zero reproduces the current estimate.
    """
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    if np.any(horizons < 0):
        raise ValueError("prediction horizons must be non-negative")
    means, covs = [], []
    for h in horizons:
        A = model.ssm.transition(h)
        means.append(A @ gp_mean)
        P = A @ gp_cov @ A.T + model.ssm.process_noise(h)
        covs.append(0.5 * (P + P.T))
    flags = ["current" if h == 0 else "extrapolated" for h in horizons]
    return to_health_estimate(model, start_age + horizons, np.array(means), np.array(covs), flags)


def capacity_errors(estimated, truth) -> dict:
    """RMSE (Ah) and MAPE (%) of capacity estimates."""
    est = np.asarray(estimated, dtype=float)
    ref = np.asarray(truth, dtype=float)
    err = est - ref
    return {"rmse": float(np.sqrt(np.mean(err**2))), "mape": float(100.0 * np.mean(np.abs(err / ref)))}


__all__ = [
    "FilterOptions", "JointState", "FilterDiagnostics", "HealthEstimate", "JointModel",
    "CoestimationResult", "spatial_weights", "evaluate_r0", "ekf_step", "filter_segment",
    "run_coestimation", "kalman_filter_nodes", "rts_smooth", "predict_future",
    "to_health_estimate", "capacity_errors", "wv_initial_cov", "wv_transition",
]
