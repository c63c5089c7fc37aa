"""Cycling-data ingestion, discharge-segment extraction, OCV calibration and synthetic cells."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import isotonic_regression

from .ecm import OcvCurve, SECONDS_PER_HOUR
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
SEGMENT_FORMAT = "agingecm-segment v1"


@dataclass
class Segment:
    """One contiguous discharge record.

    ``t`` is in seconds (any origin), ``current`` in A (negative on discharge),
    ``voltage`` in V and ``age`` in days since cell birth.
    """

    age: float
    t: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    role: str = "train"
    soc0: float | None = None
    cell_id: str = ""
    truncated: bool = False

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.current = np.asarray(self.current, dtype=float)
        self.voltage = np.asarray(self.voltage, dtype=float)
        if not (self.t.shape == self.current.shape == self.voltage.shape):
            raise DataError("segment series must have equal length")
        if self.t.size and np.any(np.diff(self.t) <= 0):
            raise DataError(f"segment at age {self.age}: time must be strictly increasing")

    def __len__(self):
        return self.t.size

    @property
    def sample_period(self) -> float:
        return float(np.median(np.diff(self.t))) if self.t.size > 1 else float("nan")

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if self.t.size else 0.0

    @property
    def charge_ah(self) -> float:
        """Signed charge moved, ``sum(I dt)`` in Ah (negative for a discharge)."""
        dt = np.diff(self.t)
        return float(np.sum(self.current[1:] * dt) / SECONDS_PER_HOUR)


@dataclass
class CyclingRecord:
    t: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    malformed: int = 0
    source: str = ""


# ---------------------------------------------------------------------------
# CSV ingestion

REQUIRED_COLUMNS = ("time", "current", "voltage")


def load_cycling_csv(path, schema: dict) -> CyclingRecord:
    """Read a delimited cycling log into SI units with discharge current negative.

    ``schema`` keys: ``columns`` (mapping of ``time``/``current``/``voltage`` to
    file column names), ``time_unit`` (``"s"``, ``"min"``, ``"h"`` or
    ``"datetime"``), ``current_scale``, ``voltage_scale``, ``discharge_sign``
    (``"negative"`` or ``"positive"``), ``delimiter`` and ``max_malformed_fraction``.
    """
    columns = dict(schema.get("columns", {}))
    for key in REQUIRED_COLUMNS:
        if key not in columns:
            raise ConfigError(f"dataset schema has no mapping for column '{key}'")
    path = Path(path)
    try:
        header = pd.read_csv(path, nrows=0, sep=schema.get("delimiter", ","), comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read cycling file {path}: {exc}") from exc
    for key in REQUIRED_COLUMNS:
        if columns[key] not in header.columns:
            raise ConfigError(f"column '{columns[key]}' (mapped to {key}) not found in {path}")
    df = pd.read_csv(path, sep=schema.get("delimiter", ","), comment="#",
                     usecols=[columns[k] for k in REQUIRED_COLUMNS], dtype=str)
    n_rows = len(df)
    if n_rows == 0:
        raise DataError(f"{path} contains no data rows")

    time_unit = schema.get("time_unit", "s")
    raw_t = df[columns["time"]]
    if time_unit == "datetime":
        ts = pd.to_datetime(raw_t, errors="coerce")
        t = (ts - ts.dropna().iloc[0]).dt.total_seconds().to_numpy() if ts.notna().any() else np.full(n_rows, np.nan)
    else:
        scale = {"s": 1.0, "min": 60.0, "h": 3600.0}.get(time_unit)
        if scale is None:
            raise ConfigError(f"unknown time_unit {time_unit!r}")
        t = pd.to_numeric(raw_t, errors="coerce").to_numpy(dtype=float) * scale
    current = pd.to_numeric(df[columns["current"]], errors="coerce").to_numpy(dtype=float)
    voltage = pd.to_numeric(df[columns["voltage"]], errors="coerce").to_numpy(dtype=float)
    current = current * float(schema.get("current_scale", 1.0))
    voltage = voltage * float(schema.get("voltage_scale", 1.0))
    sign = schema.get("discharge_sign", "negative")
    if sign == "positive":
        current = -current
    elif sign != "negative":
        raise ConfigError(f"discharge_sign must be 'negative' or 'positive', got {sign!r}")

    ok = np.isfinite(t) & np.isfinite(current) & np.isfinite(voltage)
    # drop rows that do not advance the clock
    keep = np.zeros(n_rows, dtype=bool)
    last = -np.inf
    for i in np.flatnonzero(ok):
        if t[i] > last:
            keep[i] = True
            last = t[i]
    malformed = int(n_rows - keep.sum())
    limit = float(schema.get("max_malformed_fraction", 0.01))
    if malformed > limit * n_rows:
        raise DataError(f"{path}: {malformed} of {n_rows} rows malformed (limit {limit:.1%})")
    if malformed:
        logger.warning("%s: skipped %d malformed rows", path, malformed)
    t = t[keep]
    return CyclingRecord(t=t - t[0], current=current[keep], voltage=voltage[keep],
                         malformed=malformed, source=str(path))


# ---------------------------------------------------------------------------
# Segment extraction


def _runs(mask: np.ndarray):
    """Start/stop (exclusive) index pairs of contiguous ``True`` runs."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def extract_discharge_segments(record: CyclingRecord, n_segments: int, nominal_capacity: float,
                               n_train: int = 10, threshold_rate: float = 0.01,
                               min_duration: float = 60.0, birth_offset_days: float = 1.0,
                               include_rest: bool = True, cell_id: str = "") -> list[Segment]:
    """Pick ``n_segments`` discharge runs spread uniformly over the record's life.

    A discharge run is a contiguous stretch with ``I < -threshold_rate * nominal_capacity``
    lasting at least ``min_duration`` seconds. The rest sample preceding a run is
    kept so the segment-start SOC can be read off the OCV.
    """
    if n_segments < 1:
        raise ConfigError("n_segments must be at least 1")
    t, current, voltage = record.t, record.current, record.voltage
    if t.size < 2:
        raise DataError("cycling record is too short")
    thresh = threshold_rate * nominal_capacity
    mask = current < -thresh
    dt_med = float(np.median(np.diff(t)))
    gaps = np.flatnonzero(np.diff(t) > 10 * dt_med) + 1
    mask_split = mask.copy()
    mask_split[gaps] = False  # a logging gap ends a run
    runs = []
    for a, b in _runs(mask_split):
        if t[b - 1] - t[a] < min_duration:
            continue
        start = a
        if include_rest and a > 0 and abs(current[a - 1]) <= thresh and t[a] - t[a - 1] <= 10 * dt_med:
            start = a - 1
        runs.append((start, b))
    if len(runs) < n_segments:
        raise DataError(f"found {len(runs)} discharge runs, {n_segments} requested")

    run_ages = np.array([birth_offset_days + t[a] / SECONDS_PER_DAY for a, _ in runs])
    targets = np.linspace(run_ages[0], run_ages[-1], n_segments) if n_segments > 1 else run_ages[:1]
    chosen: list[int] = []
    available = np.ones(len(runs), dtype=bool)
    for target in targets:
        cand = np.flatnonzero(available)
        k = cand[np.argmin(np.abs(run_ages[cand] - target))]
        available[k] = False
        chosen.append(int(k))
    chosen.sort()

    segments = []
    for n, k in enumerate(chosen):
        a, b = runs[k]
        seg_t = t[a:b]
        segments.append(Segment(
            age=float(run_ages[k]),
            t=seg_t - seg_t[0],
            current=current[a:b].copy(),
            voltage=voltage[a:b].copy(),
            role="train" if n < n_train else "test",
            cell_id=cell_id,
        ))
    return segments


# ---------------------------------------------------------------------------
# OCV calibration


def discharge_capacity(t, current) -> float:
    """Ah delivered by the discharge samples of a record (positive number)."""
    t = np.asarray(t, dtype=float)
    current = np.asarray(current, dtype=float)
    dt = np.diff(t)
    i = np.minimum(current[1:], 0.0)
    return float(-np.sum(i * dt) / SECONDS_PER_HOUR)


def calibrate_ocv(t, current, voltage, n_bins: int = 100, repair_tol: float = 0.02) -> OcvCurve:
    """Pseudo-OCV curve from a low-rate full-depth discharge.

    SOC runs from 1 at the first sample to 0 at the last (cumulative Ah
    normalized by the total). Each of the ``n_bins`` knots, evenly spaced on
    ``[0, 1]``, gets the value of a straight line fitted to the samples within
    half a knot spacing. The knot voltages are then made monotone by isotonic
    regression; repairs larger than ``repair_tol`` volts are rejected.
    """
    t = np.asarray(t, dtype=float)
    current = np.asarray(current, dtype=float)
    voltage = np.asarray(voltage, dtype=float)
    if n_bins < 2:
        raise ConfigError("need at least two OCV bins")
    dt = np.diff(t, prepend=t[0])
    ah = -np.cumsum(np.minimum(current, 0.0) * dt) / SECONDS_PER_HOUR
    total = ah[-1]
    if not total > 0:
        raise DataError("RPT record contains no discharge")
    soc = 1.0 - ah / total
    knots = np.linspace(0.0, 1.0, n_bins)
    half = 0.5 / (n_bins - 1)
    values = np.full(n_bins, np.nan)
    for k, zk in enumerate(knots):
        sel = np.abs(soc - zk) <= half + 1e-12
        if np.count_nonzero(sel) >= 2 and np.ptp(soc[sel]) > 0:
            slope, icpt = np.polyfit(soc[sel] - zk, voltage[sel], 1)
            values[k] = icpt
        elif np.any(sel):
            values[k] = float(np.mean(voltage[sel]))
    have = np.isfinite(values)
    if have.sum() < 2:
        raise DataError("RPT record too sparse for the requested OCV resolution")
    values = np.interp(knots, knots[have], values[have])
    repaired = isotonic_regression(values, increasing=True).x
    if np.max(np.abs(repaired - values)) > repair_tol:
        raise DataError(f"pseudo-OCV is non-monotone beyond {repair_tol} V; check the RPT selection")
    # lift ties so the curve is strictly increasing
    step = 1e-6
    for k in range(1, n_bins):
        if repaired[k] <= repaired[k - 1]:
            repaired[k] = repaired[k - 1] + step
    return OcvCurve(knots, repaired)


# ---------------------------------------------------------------------------
# Segment files


def write_segment(path, segment: Segment, meta: dict | None = None) -> None:
    lines = [f"# format={SEGMENT_FORMAT}",
             f"# cell_id={segment.cell_id}",
             f"# age_days={segment.age!r}",
             f"# sample_period_s={segment.sample_period!r}",
             f"# role={segment.role}",
             f"# soc0={'' if segment.soc0 is None else repr(segment.soc0)}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}={v}")
    lines.append("t_s,current_a,voltage_v")
    body = [f"{a!r},{b!r},{c!r}" for a, b, c in zip(segment.t.tolist(), segment.current.tolist(),
                                                  segment.voltage.tolist())]
    Path(path).write_text("\n".join(lines + body) + "\n")


def read_segment(path) -> Segment:
    path = Path(path)
    meta = {}
    rows = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif line and not line.startswith("t_s"):
            rows.append([float(v) for v in line.split(",")])
    if meta.get("format") != SEGMENT_FORMAT:
        raise DataError(f"{path} is not a segment file ({meta.get('format')!r})")
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    soc0 = meta.get("soc0", "")
    return Segment(age=float(meta["age_days"]), t=arr[:, 0], current=arr[:, 1], voltage=arr[:, 2],
                   role=meta.get("role", "train"), soc0=float(soc0) if soc0 else None,
                   cell_id=meta.get("cell_id", ""))


def read_segments(directory) -> list[Segment]:
    files = sorted(Path(directory).glob("segment_*.csv"))
    if not files:
        raise DataError(f"no segment files in {directory}")
    segs = [read_segment(f) for f in files]
    return sorted(segs, key=lambda s: s.age)


# ---------------------------------------------------------------------------
# Synthetic cells


def synthetic_ocv_fn(z):
    """Smooth NMC/graphite-like OCV from 3.0 V (z=0) to 4.2 V (z=1) with a mid-SOC step."""
    z = np.asarray(z, dtype=float)

    def raw(x):
        return (3.55 + 0.55 * x + 0.06 * np.tanh((x - 0.55) / 0.06)
                - 0.45 * np.exp(-x / 0.05) + 0.06 * np.exp((x - 1.0) / 0.04))

    lo, hi = raw(0.0), raw(1.0)
    return 3.0 + 1.2 * (raw(z) - lo) / (hi - lo)


def synthetic_ocv(n_knots: int = 201) -> OcvCurve:
    z = np.linspace(0.0, 1.0, n_knots)
    return OcvCurve(z, synthetic_ocv_fn(z))


@dataclass
class SynthSpec:
    """Ground-truth description of a synthetic cell.

    ``capacity(age)`` in Ah, ``resistance(z, current, age)`` in Ohm and
    ``docv(z, age)`` in V (OCV drift relative to ``ocv``). ``current`` is a
    constant (A, negative for discharge) or a function of time in seconds.
    """

    capacity: Callable[[float], float]
    resistance: Callable
    ocv: OcvCurve
    ages: Sequence[float]
    docv: Callable | None = None
    noise_std: float = 0.005
    current: float | Callable[[np.ndarray], np.ndarray] = -0.14
    sample_period: float = 20.0
    soc_start: float = 1.0
    v_min: float = 3.0
    v_max: float = 4.2
    max_duration: float = 6 * 3600.0
    rest_samples: int = 1
    n_train: int | None = None

    def __post_init__(self):
        self.ages = [float(a) for a in self.ages]
        if any(a <= 0 for a in self.ages):
            raise ConfigError("synthetic ages must be positive")
        for a in self.ages:
            if not self.capacity(a) > 0:
                raise ConfigError(f"true capacity must be positive at age {a}")


def linear_fade(q_start: float = 0.28, q_end: float = 0.25, span_days: float = 100.0, age0: float = 0.0):
    def capacity(age):
        return q_start + (q_end - q_start) * (age - age0) / span_days
    return capacity


def synth_generate(spec: SynthSpec, seed: int = 0):
    """Simulate discharge segments from the true model.

    Each segment starts with ``rest_samples`` zero-current samples at
    ``soc_start`` and discharges until the noiseless terminal voltage falls
    below ``v_min`` (``truncated`` flags segments stopped by the voltage limit
    rather than ``max_duration``). Returns ``(segments, truth)`` where ``truth``
    has per-segment ages, capacities and the true SOC trajectories.
    """
    rng = np.random.default_rng(seed)
    segments: list[Segment] = []
    truth = {"age": [], "capacity": [], "soc": [], "end_age": []}
    n_steps = int(spec.max_duration // spec.sample_period) + spec.rest_samples
    t = np.arange(n_steps) * spec.sample_period
    for n, age in enumerate(spec.ages):
        q = spec.capacity(age)
        if callable(spec.current):
            cur = np.asarray(spec.current(t), dtype=float)
        else:
            cur = np.full(n_steps, float(spec.current))
        cur[: spec.rest_samples] = 0.0
        dt = np.diff(t, prepend=t[0])
        z = spec.soc_start + np.cumsum(cur * dt) / (SECONDS_PER_HOUR * q)
        v = spec.ocv(np.clip(z, 0.0, 1.0)) + (0.0 if spec.docv is None else spec.docv(z, age))
        r = np.broadcast_to(np.asarray(spec.resistance(z, cur, age), dtype=float), z.shape)
        v = v + r * cur
        bad = np.flatnonzero((v < spec.v_min) | (z <= 0.0))
        stop = int(bad[0]) if bad.size else n_steps
        truncated = bool(bad.size)
        if stop <= spec.rest_samples + 1:
            raise DataError(f"synthetic segment at age {age} hits the voltage limit immediately")
        noisy = v[:stop] + spec.noise_std * rng.standard_normal(stop)
        n_train = spec.n_train if spec.n_train is not None else len(spec.ages)
        segments.append(Segment(age=age, t=t[:stop].copy(), current=cur[:stop].copy(), voltage=noisy,
                                role="train" if n < n_train else "test", soc0=spec.soc_start,
                                cell_id="synthetic", truncated=truncated))
        truth["age"].append(age)
        truth["capacity"].append(q)
        truth["soc"].append(z[:stop].copy())
        truth["end_age"].append(age + t[stop - 1] / SECONDS_PER_DAY)
    truth["age"] = np.array(truth["age"])
    truth["capacity"] = np.array(truth["capacity"])
    truth["end_age"] = np.array(truth["end_age"])
    return segments, truth


def synth_raw_stream(segments: Sequence[Segment], rest_seconds: float = 600.0):
    """Concatenate synthetic segments into one time-ordered cycling log.

    Segments are placed at their ages; ``rest_seconds`` of zero-current samples
    at the segment's first voltage precede each discharge.
    """
    ts, cs, vs = [], [], []
    for seg in segments:
        start = (seg.age - 1.0) * SECONDS_PER_DAY
        period = seg.sample_period
        n_rest = max(int(rest_seconds // period), 1)
        rest_t = start - period * np.arange(n_rest, 0, -1)
        ts.append(rest_t)
        cs.append(np.zeros(n_rest))
        vs.append(np.full(n_rest, seg.voltage[0]))
        ts.append(start + seg.t - seg.t[0])
        cs.append(seg.current)
        vs.append(seg.voltage)
    t = np.concatenate(ts)
    return CyclingRecord(t=t - t[0], current=np.concatenate(cs), voltage=np.concatenate(vs))


def synth_rpt(ocv: OcvCurve, capacity: float, current: float, sample_period: float = 10.0,
              resistance: float = 0.0, docv: Callable | None = None):
    """Noise-free low-rate full-depth discharge from SOC 1 to 0: ``(t, I, V)``."""
    duration = capacity / abs(current) * SECONDS_PER_HOUR
    t = np.arange(0.0, duration + 1e-9, sample_period)
    cur = np.full(t.size, -abs(current))
    dt = np.diff(t, prepend=t[0])
    z = 1.0 - np.cumsum(abs(current) * dt) / (SECONDS_PER_HOUR * capacity)
    v = ocv(z) + (0.0 if docv is None else docv(z)) + resistance * cur
    return t, cur, v


@dataclass
class ModelSample:
    """Output of :func:`sample_from_model`: segments plus the true GP trajectories."""

    segments: list
    gp_end_states: np.ndarray
    true_z: list = field(default_factory=list)


def sample_from_model(hp, cell, ocv: OcvCurve, ages: Sequence[float], current: float,
                      sample_period: float, n_samples: int, seed: int = 0,
                      soc0_mean: float = 0.95, soc0_std: float = 0.02, soc_process_var: float = 0.0) -> ModelSample:
    """Draw a dataset from the filter's own generative model.

    GP states are drawn from the Wiener-velocity prior and propagated through
    the same discretization the filter uses (including the within-segment
    micro-steps); SOC is Coulomb-counted with the drawn inverse capacity and
    voltages carry the interpolation residual and measurement noise.
    """
    from .estimator import JointModel, SECONDS_PER_DAY as SPD, FilterOptions

    rng = np.random.default_rng(seed)
    model = JointModel(hp, cell, ocv, FilterOptions(soc_init="segment", soc_init_std=soc0_std,
                                                    soc_process_var=soc_process_var))
    ssm = model.ssm
    P0 = ssm.initial_cov(ages[0])
    w, V = np.linalg.eigh(P0)
    x = V @ (np.sqrt(np.clip(w, 0, None)) * rng.standard_normal(P0.shape[0]))
    segments, ends, true_z = [], [], []
    last_end = ages[0]
    t = np.arange(n_samples) * sample_period
    for age in ages:
        gap = age - last_end
        if gap > 0:
            x = ssm.transition(gap) @ x + ssm.sample_noise(gap, rng)
        z = soc0_mean + soc0_std * rng.standard_normal()
        volts = np.empty(n_samples)
        cur = np.full(n_samples, float(current))
        zs = np.empty(n_samples)
        for i in range(n_samples):
            if i > 0:
                dt = t[i] - t[i - 1]
                dd = dt / SPD
                z = z + model.q0 * (1.0 + x[0]) * cur[i] * dt / SECONDS_PER_HOUR
                if soc_process_var:
                    z += np.sqrt(soc_process_var) * rng.standard_normal()
                x = ssm.transition(dd) @ x + ssm.sample_noise(dd, rng)
            wts, _, resid = model.readout.weights(z, cur[i])
            r = wts @ x[2::2] + np.sqrt(resid) * rng.standard_normal()
            volts[i] = ocv(z) + cur[i] * model.r0 * (1.0 + r) + np.sqrt(hp.noise_var) * rng.standard_normal()
            zs[i] = z
        segments.append(Segment(age=float(age), t=t.copy(), current=cur, voltage=volts, soc0=soc0_mean,
                                cell_id="model-sample"))
        ends.append(x.copy())
        true_z.append(zs)
        last_end = age + t[-1] / SPD
    return ModelSample(segments=segments, gp_end_states=np.array(ends), true_z=true_z)


# ---------------------------------------------------------------------------
# Benchmark scenarios


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class OcvFeature:
    """A smoothed OCV step of height ``amplitude`` (V) centred at SOC ``centre(age)``.

    The step is anchored at full charge: it is zero at ``z = 1`` and lowers the
    OCV by ``amplitude`` below the centre, so rest voltages at full charge stay
    on the reference curve. With ``ramp_days`` set, the height grows linearly
    from zero at age 0 and saturates after that many days, so the step is an
    aging-induced change away from the beginning-of-life OCV.
    """

    amplitude: float
    width: float
    centre: Callable[[float], float]
    ramp_days: float | None = None

    def height(self, age) -> float:
        if self.ramp_days is None:
            return self.amplitude
        return self.amplitude * min(max(age, 0.0) / self.ramp_days, 1.0)

    def __call__(self, z, age):
        return -self.height(age) * _sigmoid((self.centre(age) - np.asarray(z, dtype=float)) / self.width)

    def peak_ah(self, age, capacity: float) -> float:
        """Discharged charge at which the step's ``dV/dQ`` extremum sits."""
        return (1.0 - self.centre(age)) * capacity


def _linear(a, b, age0, age1):
    def f(age):
        return a + (b - a) * (age - age0) / (age1 - age0)
    return f


@dataclass
class Scenario:
    """A synthetic benchmark: the generator spec plus the extra ground truth needed to score it."""

    name: str
    spec: SynthSpec
    features: list = field(default_factory=list)
    docv_ramp: Callable | None = None
    horizon_days: float = 0.0

    def docv(self, z, age):
        return 0.0 if self.spec.docv is None else self.spec.docv(z, age)


BENCHMARKS = ("linear_fade", "ocv_drift", "dva_shift", "dva_control")


def benchmark_scenario(name: str, n_segments: int = 10, first_age: float | None = None, last_age: float | None = None,
                       noise_std: float = 0.005, current: float = -0.14, sample_period: float = 20.0,
                       ocv: OcvCurve | None = None, feature_height: float = 0.08,
                       feature_width: float = 0.04) -> Scenario:
    """Cell-A-like synthetic cells (0.28 Ah, 0.13 Ohm, 3.0-4.2 V) used by the acceptance suite and ``synth``.

    ``linear_fade``: capacity 0.28 -> 0.25 Ah over 100 days, constant resistance.
    ``ocv_drift``: as above plus an SOC-dependent OCV sag that deepens with age.
    ``dva_shift``: as above plus two OCV steps (relative to the filter's OCV)
    that grow in from zero height at age 0 while their SOC positions migrate.
    ``dva_control``: the two growing steps at fixed positions with no fade.

    Segment ages default to 2-70 days. The two DVA scenarios default to
    20-90 days instead: the steps start from nothing at age 0, and the first
    days carry too little of them to place a peak.
    """
    if name not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
    ocv = ocv or synthetic_ocv()
    dva = name in ("dva_shift", "dva_control")
    if first_age is None:
        first_age = 20.0 if dva else 2.0
    if last_age is None:
        last_age = 90.0 if dva else 70.0
    ages = np.linspace(first_age, last_age, n_segments)
    fade = linear_fade(0.28, 0.25, 100.0)
    capacity = fade
    features: list[OcvFeature] = []
    docv = None
    ramp = None
    if name == "ocv_drift":
        def ramp(z, age):
            # deepest sag mid-SOC, never zero so every SOC carries signal
            return -0.02 * (age / 100.0) * (0.6 + 0.4 * np.sin(np.pi * np.asarray(z, dtype=float)))
        docv = ramp
    elif dva:
        moving = name == "dva_shift"
        features = [
            OcvFeature(feature_height, feature_width, _linear(0.70, 0.76 if moving else 0.70, 0.0, 100.0), 100.0),
            OcvFeature(feature_height, feature_width, _linear(0.35, 0.37 if moving else 0.35, 0.0, 100.0), 100.0),
        ]
        if not moving:
            def capacity(age):
                return 0.28

        def docv(z, age):
            return sum(f(z, age) for f in features)
    spec = SynthSpec(capacity=capacity, resistance=lambda z, i, a: 0.13, ocv=ocv, ages=ages, docv=docv,
                     noise_std=noise_std, current=current, sample_period=sample_period)
    return Scenario(name=name, spec=spec, features=features, docv_ramp=ramp,
                    horizon_days=30.0 if name == "linear_fade" else 0.0)
