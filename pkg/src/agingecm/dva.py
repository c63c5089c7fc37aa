"""Differential-voltage analytics on measured discharges and on learned resistance surfaces.

Curves are indexed by discharged charge (Ah, ascending). Measured curves are
``dV/dQ``; estimated ones are ``d[I_ref R0]/dQ`` read off the GP posterior at
``Q = (1 - z) Q(age)``. Peaks are tracked across ages and turned into
lithium-inventory and negative-electrode active-material loss figures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import linear_sum_assignment
from scipy.signal import find_peaks

from .ecm import OcvCurve, SECONDS_PER_HOUR
from .errors import DataError

logger = logging.getLogger(__name__)

RPT_WINDOW = 25
ESTIMATE_WINDOW_CELLS = 5
POLY_ORDER = 2


@dataclass
class DvdqCurve:
    """A differential curve over discharged charge.

    ``source`` is ``"rpt"`` for measured voltage or ``"estimated"`` for the
    learned resistance surface; ``window``/``order`` describe the smoothing.
    """

    discharge_ah: np.ndarray
    value: np.ndarray
    window: int
    order: int
    source: str = "rpt"
    age: float | None = None
    capacity: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.discharge_ah = np.asarray(self.discharge_ah, dtype=float)
        self.value = np.asarray(self.value, dtype=float)
        if self.discharge_ah.shape != self.value.shape:
            raise ValueError("discharge_ah and value must have equal length")
        if np.any(np.diff(self.discharge_ah) <= 0):
            raise ValueError("discharge_ah must be strictly increasing")

    def __len__(self):
        return self.discharge_ah.size

    @property
    def spacing(self) -> float:
        if self.discharge_ah.size < 2:
            return 0.0
        return float(np.median(np.diff(self.discharge_ah)))


def local_poly_derivative(x, y, window: int = RPT_WINDOW, order: int = POLY_ORDER):
    """First derivative from a centred local polynomial fit.

    Each output point is the linear coefficient of a least-squares polynomial
    of degree ``order`` fitted to ``window`` samples centred on it (abscissae
    need not be uniform). Returns ``(x_trimmed, dy_dx)``; the ``window // 2``
    points at each end are dropped.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if window % 2 == 0:
        window += 1
    if order < 1 or order >= window:
        raise ValueError("need 1 <= order < window")
    if x.size < window:
        raise DataError(f"need at least {window} points for the derivative window, got {x.size}")
    half = window // 2
    X = sliding_window_view(x, window)
    Y = sliding_window_view(y, window)
    centre = X[:, half][:, None]
    # scale the local abscissa so the normal equations stay well conditioned
    scale = np.maximum(np.abs(X - centre).max(axis=1, keepdims=True), np.finfo(float).tiny)
    u = (X - centre) / scale
    V = u[..., None] ** np.arange(order + 1)
    A = np.einsum("nwi,nwj->nij", V, V)
    b = np.einsum("nwi,nw->ni", V, Y)
    coef = np.linalg.solve(A, b[..., None])[..., 0]
    return x[half:x.size - half], coef[:, 1] / scale[:, 0]


def cumulative_discharge_ah(current, dt) -> np.ndarray:
    """Discharged charge in Ah, starting at zero, from current (A) and step lengths (s).

    ``dt`` is a scalar sample period or per-sample step lengths (the first
    entry is ignored).
    """
    current = np.asarray(current, dtype=float)
    steps = np.broadcast_to(np.asarray(dt, dtype=float), current.shape).copy()
    steps[0] = 0.0
    return np.cumsum(-current * steps) / SECONDS_PER_HOUR


def dvdq_from_discharge(voltage, current, dt, window: int = RPT_WINDOW, order: int = POLY_ORDER,
                        age: float | None = None) -> DvdqCurve:
    """``dV/dQ`` (V/Ah) of a low-rate discharge against discharged Ah."""
    voltage = np.asarray(voltage, dtype=float)
    q = cumulative_discharge_ah(current, dt)
    if voltage.shape != q.shape:
        raise DataError("voltage and current must have equal length")
    if np.any(np.diff(q) <= 0):
        raise DataError("cumulative discharge must increase at every sample (use a discharge-only record)")
    x, d = local_poly_derivative(q, voltage, window, order)
    return DvdqCurve(x, d, window=window | 1, order=order, source="rpt", age=age, capacity=float(q[-1]))


def dirdq_from_estimates(estimate, index: int, i_ref: float, n_points: int = 241,
                         window_cells: float = ESTIMATE_WINDOW_CELLS, order: int = POLY_ORDER,
                         soc_range=(0.0, 1.0)) -> DvdqCurve:
    """``d[I_ref R0]/dQ`` at age ``estimate.ages[index]`` on a dense SOC axis.

    ``R0`` is read off the gridded GP with the Matern interpolation weights,
    the SOC axis is mapped to discharged charge ``(1 - z) Q(age)`` with the
    posterior-mean capacity, and the same local-polynomial derivative as for
    measured curves is applied. The smoothing window spans ``window_cells``
    SOC grid cells.
    """
    grid = estimate.grid
    currents = np.unique(grid[:, 1])
    i_abs = abs(float(i_ref))
    if estimate.cell.n_current > 1 and not (currents[0] - 1e-12 <= i_abs <= currents[-1] + 1e-12):
        nearest = float(currents[np.argmin(np.abs(currents - i_abs))])
        logger.warning("I_ref %.4g A is outside the grid current range; using %.4g A", i_abs, nearest)
        i_abs = nearest
    z = np.linspace(soc_range[1], soc_range[0], n_points)
    r0, _ = estimate.r0_profile(index, z, i_abs)
    q = float(estimate.capacity_mean[index])
    x = (1.0 - z) * q
    grid_step = 1.0 / (estimate.cell.n_soc - 1)
    dense_step = abs(z[1] - z[0])
    window = max(int(round(window_cells * grid_step / dense_step)), order + 2)
    window |= 1
    xs, d = local_poly_derivative(x, float(i_ref) * r0, window, order)
    return DvdqCurve(xs, d, window=window, order=order, source="estimated",
                     age=float(estimate.ages[index]), capacity=q,
                     meta={"i_ref": float(i_ref), "window_cells": window_cells})


def docv_from_curves(ocv_bol: OcvCurve, ocv_now: OcvCurve, soc) -> np.ndarray:
    """Up-to-date minus beginning-of-life pseudo-OCV at equal SOC."""
    return np.asarray(ocv_now(soc)) - np.asarray(ocv_bol(soc))


def correlate_r0_docv(r0, docv) -> np.ndarray:
    """Per-SOC Pearson coefficient across ages.

    ``r0`` and ``docv`` are ``(n_ages, n_soc)`` arrays on the same SOC grid.
    Columns where either series has zero variance get ``nan`` (no coefficient).
    """
    a = np.asarray(r0, dtype=float)
    b = np.asarray(docv, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise DataError("R0 and dOCV must be (n_ages, n_soc) arrays on the same grid")
    if a.shape[0] < 3:
        raise DataError("correlation needs at least 3 ages")
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    sa = np.sqrt(np.sum(da * da, axis=0))
    sb = np.sqrt(np.sum(db * db, axis=0))
    tiny = 1e-14 * np.maximum(np.abs(a).max(axis=0), np.abs(b).max(axis=0)).clip(min=1e-300)
    ok = (sa > tiny * np.sqrt(a.shape[0])) & (sb > tiny * np.sqrt(a.shape[0]))
    out = np.full(a.shape[1], np.nan)
    out[ok] = np.sum(da[:, ok] * db[:, ok], axis=0) / (sa[ok] * sb[ok])
    return np.clip(out, -1.0, 1.0)


@dataclass
class PeakTrack:
    """Peak positions per age, columns are stable peak IDs (``nan`` where a peak is not seen)."""

    ages: np.ndarray
    positions: np.ndarray
    prominences: np.ndarray
    resolution: np.ndarray
    ids: list

    @property
    def n_peaks(self) -> int:
        return len(self.ids)

    def position(self, peak_id: int) -> np.ndarray:
        return self.positions[:, self.ids.index(peak_id)]


def _refine(x, y, k):
    """Vertex of the parabola through the three samples around index ``k``."""
    if k <= 0 or k >= x.size - 1:
        return float(x[k])
    x0, x1, x2 = x[k - 1:k + 2]
    y0, y1, y2 = y[k - 1:k + 2]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
    if a >= 0:
        return float(x1)
    return float(np.clip(-b / (2.0 * a), x0, x2))


def find_curve_peaks(curve: DvdqCurve, rel_prominence: float = 0.05, min_prominence: float | None = None,
                     polarity: float = 1.0):
    """Local maxima of ``polarity * value`` with sub-sample positions and prominences."""
    y = polarity * curve.value
    if y.size < 3:
        return np.empty(0), np.empty(0)
    threshold = min_prominence if min_prominence is not None else rel_prominence * float(np.ptp(y))
    if not threshold > 0:
        return np.empty(0), np.empty(0)
    idx, props = find_peaks(y, prominence=threshold)
    pos = np.array([_refine(curve.discharge_ah, y, k) for k in idx])
    return pos, np.asarray(props["prominences"], dtype=float)


def track_peaks(curves: Sequence[DvdqCurve], rel_prominence: float = 0.05,
                min_prominence: float | None = None, polarity: float = 1.0,
                max_link_distance: float | None = None) -> PeakTrack:
    """Detect peaks on each curve and link them across ages.

    Peaks are matched to the last known position of every existing ID by a
    minimum-total-distance assignment; a peak farther than
    ``max_link_distance`` (default 10% of the first curve's span) from every
    free ID starts a new ID. IDs are finally numbered by mean position, so ID 0
    is the track nearest full charge whichever age it first shows up at.
    """
    if not curves:
        raise ValueError("need at least one curve")
    if max_link_distance is None:
        span = curves[0].discharge_ah[-1] - curves[0].discharge_ah[0]
        max_link_distance = 0.1 * span
    last: list[float] = []
    rows: list[dict] = []
    for curve in curves:
        pos, prom = find_curve_peaks(curve, rel_prominence, min_prominence, polarity)
        assigned: dict = {}
        if last and pos.size:
            cost = np.abs(pos[:, None] - np.asarray(last)[None, :])
            r, c = linear_sum_assignment(cost)
            for i, j in zip(r, c):
                if cost[i, j] <= max_link_distance:
                    assigned[i] = j
        row = {}
        for i in range(pos.size):
            j = assigned.get(i)
            if j is None:
                j = len(last)
                last.append(pos[i])
            last[j] = pos[i]
            row[j] = (pos[i], prom[i])
        rows.append(row)
    n_ids = len(last)
    positions = np.full((len(curves), n_ids), np.nan)
    proms = np.full((len(curves), n_ids), np.nan)
    for a, row in enumerate(rows):
        for j, (p, pr) in row.items():
            positions[a, j] = p
            proms[a, j] = pr
    if n_ids:
        order = np.argsort(np.nanmean(positions, axis=0), kind="stable")
        positions, proms = positions[:, order], proms[:, order]
    ages = np.array([np.nan if c.age is None else c.age for c in curves], dtype=float)
    res = np.array([c.spacing for c in curves])
    return PeakTrack(ages=ages, positions=positions, prominences=proms, resolution=res, ids=list(range(n_ids)))


@dataclass
class DegradationModes:
    """Per-age LLI and LAM_n in percent, with the peak-position resolution as uncertainty."""

    ages: np.ndarray
    lli: np.ndarray
    lam_n: np.ndarray
    lli_unc: np.ndarray
    lam_n_unc: np.ndarray


def degradation_modes(track: PeakTrack, capacity_bol: float, anchor: int = 0,
                      pair: tuple = (0, 1)) -> DegradationModes:
    """LLI and LAM_n relative to the first age of ``track``.

    LLI is the anchor peak's move toward zero discharged charge, as a
    percentage of the beginning-of-life capacity. LAM_n is the relative
    shrinkage of the distance between the two ``pair`` peaks. Ages where a
    required peak is missing get ``nan``. The uncertainties assume each
    position is known to half a sample spacing.
    """
    if not capacity_bol > 0:
        raise ValueError("beginning-of-life capacity must be positive")
    n = len(track.ages)
    nan = np.full(n, np.nan)
    if anchor not in track.ids:
        lli = nan.copy()
    else:
        x = track.position(anchor)
        lli = 100.0 * (x[0] - x) / capacity_bol
    res = track.resolution
    lli_unc = 100.0 * 0.5 * (res + res[0]) / capacity_bol
    if pair[0] in track.ids and pair[1] in track.ids:
        dist = np.abs(track.position(pair[1]) - track.position(pair[0]))
        d0 = dist[0]
        lam = 100.0 * (d0 - dist) / d0 if d0 > 0 else nan.copy()
        lam_unc = 100.0 * (res + res[0]) / d0 if d0 > 0 else nan.copy()
    else:
        lam, lam_unc = nan.copy(), nan.copy()
    return DegradationModes(ages=track.ages, lli=lli, lam_n=lam, lli_unc=lli_unc, lam_n_unc=lam_unc)


__all__ = [
    "DvdqCurve", "PeakTrack", "DegradationModes", "local_poly_derivative", "cumulative_discharge_ah",
    "dvdq_from_discharge", "dirdq_from_estimates", "docv_from_curves", "correlate_r0_docv",
    "find_curve_peaks", "track_peaks", "degradation_modes",
]
