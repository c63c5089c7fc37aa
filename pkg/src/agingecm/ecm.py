"""Zeroth-order equivalent circuit: OCV source in series with a resistance.

Sign convention: discharge current is negative, so Coulomb counting lowers SOC
and the terminal voltage drops below OCV on discharge.
"""

from __future__ import annotations

from dataclasses import dataclass
from bisect import bisect_right
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import DataError

SECONDS_PER_HOUR = 3600.0


class OcvCurve:
    """Monotone OCV-SOC curve backed by a shape-preserving cubic (PCHIP).

    Outside the knot range the curve continues linearly with the end slope;
    every such evaluation is counted in :attr:`clamp_count`.
    """

    def __init__(self, soc_knots, voltage_knots):
        soc = np.asarray(soc_knots, dtype=float).ravel()
        volts = np.asarray(voltage_knots, dtype=float).ravel()
        if soc.size < 2 or soc.size != volts.size:
            raise DataError("OCV curve needs at least two (soc, volts) knots of equal length")
        if not (np.all(np.isfinite(soc)) and np.all(np.isfinite(volts))):
            raise DataError("OCV knots must be finite")
        if np.any(np.diff(soc) <= 0):
            raise DataError("OCV SOC knots must be strictly ascending")
        if np.any(np.diff(volts) <= 0):
            raise DataError("OCV voltage must be strictly increasing in SOC")
        self.soc_knots = soc
        self.voltage_knots = volts
        self._interp = PchipInterpolator(soc, volts, extrapolate=True)
        self._deriv = self._interp.derivative()
        self._lo, self._hi = soc[0], soc[-1]
        self._breaks = soc.tolist()
        self._coef = self._interp.c.T.tolist()
        self.clamp_count = 0

    def _clamp(self, z):
        z = np.asarray(z, dtype=float)
        outside = (z < self._lo) | (z > self._hi)
        if np.any(outside):
            self.clamp_count += int(np.count_nonzero(outside))
            z = np.clip(z, self._lo, self._hi)
        return z

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        zc = self._clamp(z)
        out = self._interp(zc) + self._deriv(zc) * (z - zc)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, z):
        out = self._deriv(self._clamp(z))
        return float(out) if np.ndim(out) == 0 else out

    def value_and_slope(self, z: float) -> tuple[float, float]:
        """Scalar fast path returning ``(OCV(z), dOCV/dz)``; used inside the filter loop."""
        z = float(z)
        zc = min(max(z, self._lo), self._hi)
        if zc != z:
            self.clamp_count += 1
        k = min(bisect_right(self._breaks, zc) - 1, len(self._coef) - 1)
        c3, c2, c1, c0 = self._coef[k]
        h = zc - self._breaks[k]
        v = ((c3 * h + c2) * h + c1) * h + c0
        dv = (3.0 * c3 * h + 2.0 * c2) * h + c1
        return v + dv * (z - zc), dv

    def invert(self, volts: float, xtol: float = 1e-13) -> float:
        """SOC at which the curve equals ``volts`` (clamped to the knot range)."""
        v = float(volts)
        if v <= self.voltage_knots[0]:
            return float(self._lo)
        if v >= self.voltage_knots[-1]:
            return float(self._hi)
        return float(brentq(lambda z: self._interp(z) - v, self._lo, self._hi, xtol=xtol))

    def shifted(self, delta_volts) -> "OcvCurve":
        return OcvCurve(self.soc_knots, self.voltage_knots + delta_volts)

    @classmethod
    def from_file(cls, path) -> "OcvCurve":
        """Read a two-column ``soc, volts`` text table (comma or whitespace separated, ``#`` comments)."""
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise DataError(f"cannot read OCV file {path}: {exc}") from exc
        rows = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except (ValueError, IndexError):
                if rows:
                    raise DataError(f"malformed OCV row in {path}: {line!r}") from None
                continue  # header line
        if len(rows) < 10:
            raise DataError(f"OCV file {path} needs at least 10 rows, found {len(rows)}")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1])

    def to_rows(self):
        return list(zip(self.soc_knots.tolist(), self.voltage_knots.tolist()))


@dataclass(frozen=True)
class CellConfig:
    """Per-cell priors and operating-grid layout.

    ``inv_capacity_prior`` is ``q0`` in 1/Ah and ``resistance_prior`` is ``r0`` in Ohm;
    the GPs model relative deviations from them.
    """

    inv_capacity_prior: float
    resistance_prior: float
    voltage_limits: tuple = (3.0, 4.2)
    n_soc: int = 25
    n_current: int = 1
    current_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not self.inv_capacity_prior > 0 or not self.resistance_prior > 0:
            raise ValueError("capacity and resistance priors must be positive")
        if self.n_soc < 2 or self.n_current < 1:
            raise ValueError("need n_soc >= 2 and n_current >= 1")

    @property
    def capacity_prior(self) -> float:
        return 1.0 / self.inv_capacity_prior


def terminal_voltage(z, current, resistance, ocv: OcvCurve):
    """``V = OCV(z) + R0 * I``."""
    return ocv(z) + np.asarray(resistance) * np.asarray(current)


def coulomb_step(z_prev, current, dt_seconds, inv_capacity):
    """One Coulomb-counting step with ``dt`` in seconds and ``Q^-1`` in 1/Ah."""
    if np.any(np.asarray(dt_seconds) <= 0):
        raise ValueError("time step must be positive")
    if np.any(np.asarray(inv_capacity) <= 0):
        raise ValueError("inverse capacity must be positive")
    return z_prev + inv_capacity * current * dt_seconds / SECONDS_PER_HOUR


def clamp_soc(z: float, lo: float = -0.05, hi: float = 1.05) -> tuple[float, bool]:
    """Clamp a filtered SOC into the tolerated band; returns ``(z, was_clamped)``."""
    if z < lo:
        return lo, True
    if z > hi:
        return hi, True
    return z, False


def linear_ocv(v_min: float = 3.0, v_max: float = 4.2, n: int = 11) -> OcvCurve:
    z = np.linspace(0.0, 1.0, n)
    return OcvCurve(z, v_min + (v_max - v_min) * z)
