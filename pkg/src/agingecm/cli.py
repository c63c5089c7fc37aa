"""``agingecm`` command line: prepare, synth, fit, estimate, predict, dva, baseline.

Every command reads one TOML config (optional for synthetic work), writes
delimited tables under ``--out`` and stamps each file with the tool version,
a hash of the resolved config and the seed. Runs with equal hashes produce
identical tables (the wall-time column of ``trace.csv`` excepted).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import DEFAULT_GRID_Q, DEFAULT_GRID_R, run_dual_estimation, tune_dual
from .datasets import (BENCHMARKS, Segment, benchmark_scenario, calibrate_ocv, extract_discharge_segments,
                       load_cycling_csv, read_segment, read_segments, synth_generate, synth_rpt, write_segment)
from .dva import (correlate_r0_docv, degradation_modes, dirdq_from_estimates, dvdq_from_discharge,
                  track_peaks)
from .ecm import CellConfig, OcvCurve
from .errors import AgingEcmError, ConfigError, DataError, NumericalError
from .estimator import FilterOptions, HealthEstimate, capacity_errors, predict_future, run_coestimation
from .hyperopt import default_bounds, heuristic_init, optimize
from .params import NAMES, HyperParams

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger("agingecm")

TOOL = "agingecm"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OTHER = 0, 2, 3, 4, 1


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class RunConfig:
    """Resolved run configuration; every field ends up in the config hash."""

    dataset: dict = field(default_factory=dict)
    segments: dict = field(default_factory=dict)
    cell: dict = field(default_factory=dict)
    filter: dict = field(default_factory=dict)
    hyperparams: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    predict: dict = field(default_factory=dict)
    dva: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    seed: int = 0

    def cell_config(self) -> CellConfig:
        c = self.cell
        try:
            return CellConfig(
                inv_capacity_prior=1.0 / float(c["capacity_prior"]),
                resistance_prior=float(c["resistance_prior"]),
                voltage_limits=tuple(c["voltage_limits"]),
                n_soc=int(c["n_soc"]),
                n_current=int(c["n_current"]),
                current_range=tuple(c["current_range"]),
            )
        except (ValueError, ZeroDivisionError, TypeError) as exc:
            raise ConfigError(f"invalid [cell] section: {exc}") from exc

    def filter_options(self) -> FilterOptions:
        try:
            return FilterOptions(**self.filter)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [filter] section: {exc}") from exc

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


DEFAULTS = {
    "dataset": {"path": None, "ocv_path": None, "rpt_path": None, "cell_id": "",
                "schema": {"columns": {}, "time_unit": "s", "current_scale": 1.0, "voltage_scale": 1.0,
                           "discharge_sign": "negative", "delimiter": ",", "max_malformed_fraction": 0.01}},
    "segments": {"n_segments": 15, "n_train": 10, "threshold_rate": 0.01, "min_duration": 60.0,
                 "birth_offset_days": 1.0, "ocv_bins": 100},
    "cell": {"capacity_prior": 0.28, "resistance_prior": 0.13, "voltage_limits": [3.0, 4.2], "n_soc": 25,
             "n_current": 1, "current_range": [0.0, 0.28]},
    "filter": {"soc_init": "full", "soc_init_std": 0.02, "update_form": "joseph"},
    "hyperparams": {},
    "fit": {"budget": 150, "bound_width": 6.0, "workers": 1},
    "predict": {"horizon_days": 30.0, "step_days": 1.0},
    "dva": {"i_ref": -0.14, "anchor": 0, "pair": [0, 1], "polarity": -1.0, "window_cells": 5.0,
            "rpt_window": 25, "rel_prominence": 0.05, "n_points": 241},
    "baseline": {"grid_q": list(DEFAULT_GRID_Q), "grid_r": list(DEFAULT_GRID_R)},
    "synth": {"scenario": "linear_fade", "n_segments": 10, "first_age": "auto", "last_age": "auto",
              "noise_std": 0.005, "current": -0.14, "sample_period": 20.0, "rpt_current": -0.028,
              "rpt_period": 20.0},
}


def _merge(base: dict, over: dict, where: str) -> dict:
    out = dict(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown key '{key}' in [{where}]")
        if isinstance(base[key], dict) and key != "columns":
            if not isinstance(val, dict):
                raise ConfigError(f"[{where}.{key}] must be a table")
            out[key] = _merge(base[key], val, f"{where}.{key}")
        else:
            out[key] = val
    return out


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a TOML config, filling defaults and applying CLI overrides."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    seed = raw.pop("seed", 0)
    merged = {}
    for section, base in DEFAULTS.items():
        sect = raw.pop(section, {})
        if not isinstance(sect, dict):
            raise ConfigError(f"[{section}] must be a table")
        if section == "hyperparams":
            unknown = set(sect) - set(NAMES)
            if unknown:
                raise ConfigError(f"unknown hyperparameters {sorted(unknown)}")
            merged[section] = dict(sect)
        else:
            merged[section] = _merge(base, sect, section)
    if raw:
        raise ConfigError(f"unknown config sections {sorted(raw)}")
    cfg = RunConfig(seed=int(seed), **merged)
    ov = overrides or {}
    if ov.get("seed") is not None:
        cfg.seed = int(ov["seed"])
    if ov.get("train_segments") is not None:
        cfg.segments["n_train"] = int(ov["train_segments"])
    if ov.get("grid_nz") is not None:
        cfg.cell["n_soc"] = int(ov["grid_nz"])
    if ov.get("grid_ni") is not None:
        cfg.cell["n_current"] = int(ov["grid_ni"])
    if ov.get("horizon_days") is not None:
        cfg.predict["horizon_days"] = float(ov["horizon_days"])
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    cfg.cell_config()
    cfg.filter_options()
    if cfg.segments["n_train"] < 1:
        raise ConfigError("segments.n_train must be at least 1")
    if int(cfg.fit["budget"]) < 1:
        raise ConfigError("fit.budget must be at least 1")
    if cfg.predict["horizon_days"] < 0 or cfg.predict["step_days"] <= 0:
        raise ConfigError("predict.horizon_days must be >= 0 and predict.step_days > 0")
    if cfg.synth["scenario"] not in BENCHMARKS:
        raise ConfigError(f"synth.scenario must be one of {', '.join(BENCHMARKS)}")
    for k in ("first_age", "last_age"):
        v = cfg.synth[k]
        if v != "auto" and not isinstance(v, (int, float)):
            raise ConfigError(f"synth.{k} must be a number or \"auto\"")
    if len(cfg.dva["pair"]) != 2:
        raise ConfigError("dva.pair must name two peak IDs")
    for k, v in cfg.hyperparams.items():
        if not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError(f"hyperparams.{k} must be a positive number")


# ---------------------------------------------------------------------------
# Table I/O


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if np.isfinite(v) else ("nan" if np.isnan(v) else ("inf" if v > 0 else "-inf"))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


class Writer:
    """Writes tables with the provenance header block."""

    def __init__(self, out: Path, command: str, cfg: RunConfig):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.header = {"tool": TOOL, "version": __version__, "command": command,
                       "config_hash": cfg.hash(), "seed": cfg.seed}
        self.written: list[Path] = []

    def table(self, name: str, columns, rows, meta: dict | None = None) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# {k}={_fmt(v)}" for k, v in {**self.header, **(meta or {})}.items()]
        lines.append(",".join(columns))
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        path.write_text("\n".join(lines) + "\n")
        self.written.append(path)
        return path


def read_table(path) -> tuple[dict, list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing input table {path}")
    meta, rows, columns = {}, [], None
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        elif columns is None:
            columns = line.split(",")
        elif line:
            rows.append(line.split(","))
    return meta, columns or [], rows


def write_estimate(w: Writer, est: HealthEstimate, prefix: str = "", meta: dict | None = None):
    cap_rows = [(a, f, m, v) for a, f, m, v in zip(est.ages, est.flags, est.capacity_mean, est.capacity_var)]
    w.table(f"{prefix}capacity.csv", ["age_days", "flag", "capacity_ah", "capacity_var"], cap_rows, meta)
    res_rows = []
    for j, (a, f) in enumerate(zip(est.ages, est.flags)):
        for k, (z, i) in enumerate(est.grid):
            res_rows.append((a, f, z, i, est.r0_mean[j, k], est.r0_var[j, k]))
    w.table(f"{prefix}resistance.csv", ["age_days", "flag", "soc", "current_a", "r0_ohm", "r0_var"], res_rows, meta)


def _segments_dir(out: Path) -> Path:
    return Path(out) / "segments"


def _load_inputs(out: Path):
    segs = read_segments(_segments_dir(out))
    ocv = OcvCurve.from_file(Path(out) / "ocv.csv")
    return segs, ocv


def _train_split(segs, cfg: RunConfig, override: int | None):
    if override is not None:
        n = int(override)
        train = segs[:n]
    else:
        train = [s for s in segs if s.role == "train"]
    if not train:
        raise ConfigError("no training segments (set --train-segments or segment roles)")
    return train


def _write_ocv(w: Writer, ocv: OcvCurve, name="ocv.csv"):
    w.table(name, ["soc", "voltage_v"], ocv.to_rows())


def _load_hyperparams(out: Path, cfg: RunConfig, segs, cell) -> tuple[HyperParams, str]:
    path = Path(out) / "hyperparams.csv"
    if path.exists():
        _, cols, rows = read_table(path)
        idx = cols.index("value")
        vals = {r[0]: float(r[idx]) for r in rows}
        return HyperParams(**{n: vals[n] for n in NAMES}), "fitted"
    base = heuristic_init(segs, cell)
    if cfg.hyperparams:
        return base.replace(**{k: float(v) for k, v in cfg.hyperparams.items()}), "config"
    logger.warning("no hyperparams.csv in %s; using heuristic initial values (run 'fit' first)", out)
    return base, "heuristic"


def _truth(out: Path):
    path = Path(out) / "truth.csv"
    if not path.exists():
        return None
    _, cols, rows = read_table(path)
    arr = np.array([[float(v) for v in r] for r in rows])
    return {c: arr[:, k] for k, c in enumerate(cols)}


# ---------------------------------------------------------------------------
# Commands


def cmd_prepare(cfg: RunConfig, out: Path, args) -> Writer:
    ds = cfg.dataset
    if not ds.get("path"):
        raise ConfigError("[dataset] path is required for 'prepare'")
    cell = cfg.cell_config()
    record = load_cycling_csv(ds["path"], ds["schema"])
    sg = cfg.segments
    segs = extract_discharge_segments(record, int(sg["n_segments"]), cell.capacity_prior,
                                      n_train=int(sg["n_train"]), threshold_rate=float(sg["threshold_rate"]),
                                      min_duration=float(sg["min_duration"]),
                                      birth_offset_days=float(sg["birth_offset_days"]), cell_id=ds["cell_id"])
    if ds.get("ocv_path"):
        ocv = OcvCurve.from_file(ds["ocv_path"])
    elif ds.get("rpt_path"):
        rpt = load_cycling_csv(ds["rpt_path"], ds["schema"])
        dis = rpt.current < 0
        ocv = calibrate_ocv(rpt.t[dis], rpt.current[dis], rpt.voltage[dis], n_bins=int(sg["ocv_bins"]))
    else:
        raise ConfigError("[dataset] needs either ocv_path or rpt_path for the OCV curve")
    w = Writer(out, "prepare", cfg)
    _write_segments(w, segs)
    _write_ocv(w, ocv)
    logger.info("prepared %d segments (%d rows)", len(segs), sum(len(s) for s in segs))
    return w


def _write_segments(w: Writer, segs):
    seg_dir = _segments_dir(w.out)
    seg_dir.mkdir(parents=True, exist_ok=True)
    for old in seg_dir.glob("segment_*.csv"):
        old.unlink()
    rows = []
    for k, s in enumerate(segs):
        path = seg_dir / f"segment_{k:03d}.csv"
        write_segment(path, s, meta={k2: _fmt(v) for k2, v in w.header.items()})
        w.written.append(path)
        rows.append((k, s.age, s.role, len(s), s.duration, s.charge_ah, s.truncated))
    w.table("segments.csv", ["index", "age_days", "role", "n_samples", "duration_s", "charge_ah", "truncated"], rows)


def _auto(v):
    return None if v == "auto" else float(v)


def cmd_synth(cfg: RunConfig, out: Path, args) -> Writer:
    sy = cfg.synth
    scen = benchmark_scenario(sy["scenario"], n_segments=int(sy["n_segments"]), first_age=_auto(sy["first_age"]),
                              last_age=_auto(sy["last_age"]), noise_std=float(sy["noise_std"]),
                              current=float(sy["current"]), sample_period=float(sy["sample_period"]))
    scen.spec.n_train = int(cfg.segments["n_train"])
    segs, truth = synth_generate(scen.spec, seed=cfg.seed)
    w = Writer(out, "synth", cfg)
    _write_segments(w, segs)
    _write_ocv(w, scen.spec.ocv)
    w.table("truth.csv", ["age_days", "end_age_days", "capacity_ah"],
            zip(truth["age"], truth["end_age"], truth["capacity"]), {"scenario": scen.name})
    # low-rate full discharges of the true cell for dV/dQ and pseudo-OCV references
    rpt_dir = w.out / "rpt"
    rpt_dir.mkdir(exist_ok=True)
    for old in rpt_dir.glob("segment_*.csv"):
        old.unlink()
    for k, (age, q) in enumerate(zip(truth["age"], truth["capacity"])):
        t, cur, v = synth_rpt(scen.spec.ocv, float(q), float(sy["rpt_current"]), float(sy["rpt_period"]),
                              resistance=0.13, docv=lambda z, a=age: scen.docv(z, a))
        seg = Segment(age=float(age), t=t, current=cur, voltage=v, role="rpt", soc0=1.0, cell_id="synthetic")
        path = rpt_dir / f"segment_{k:03d}.csv"
        write_segment(path, seg, meta={k2: _fmt(v) for k2, v in w.header.items()})
        w.written.append(path)
    if scen.features:
        rows = []
        for age, q in zip(truth["end_age"], truth["capacity"]):
            for pid, f in enumerate(scen.features):
                rows.append((age, pid, f.peak_ah(age, float(q))))
        w.table("truth_peaks.csv", ["age_days", "peak_id", "position_ah"], rows)
    return w


def _fit(cfg, out, segs, ocv, args):
    cell = cfg.cell_config()
    opts = cfg.filter_options()
    train = _train_split(segs, cfg, args.train_segments)
    hp0 = heuristic_init(train, cell)
    if cfg.hyperparams:
        hp0 = hp0.replace(**{k: float(v) for k, v in cfg.hyperparams.items()})
    bounds = default_bounds(hp0, float(cfg.fit["bound_width"]))
    res = optimize(hp0, train, cell, ocv, bounds=bounds, budget=int(cfg.fit["budget"]), options=opts,
                   workers=int(cfg.fit["workers"]))
    return res, train


def cmd_fit(cfg: RunConfig, out: Path, args) -> Writer:
    segs, ocv = _load_inputs(out)
    res, train = _fit(cfg, out, segs, ocv, args)
    w = Writer(out, "fit", cfg)
    meta = {"phi0": res.phi0, "phi": res.phi, "n_evals": res.n_evals, "message": res.message,
            "free": " ".join(res.free)}
    lo, hi = res.bounds.lower, res.bounds.upper
    w.table("hyperparams.csv", ["name", "init", "value", "lower", "upper"],
            [(n, getattr(res.hp0, n), getattr(res.hp, n), float(np.exp(lo[k])), float(np.exp(hi[k])))
             for k, n in enumerate(NAMES)], meta)
    w.table("trace.csv", ["iteration", "evaluation", *NAMES, "phi", "best_phi", "wall_time_s"],
            [(r.iteration, r.evaluation, *[getattr(r.hp, n) for n in NAMES], r.phi, r.best_phi, r.wall_time)
             for r in res.trace], {"nondeterministic_columns": "wall_time_s"})
    est = run_coestimation(train, res.hp, cfg.cell_config(), ocv, cfg.filter_options()).estimate()
    write_estimate(w, est, prefix="train_")
    if args.figures:
        from . import plotting
        plotting.trace_figure(w.out / "trace.png", [r.evaluation for r in res.trace],
                              [r.phi for r in res.trace], [r.best_phi for r in res.trace])
    return w


def _estimate(cfg, out):
    segs, ocv = _load_inputs(out)
    cell = cfg.cell_config()
    hp, source = _load_hyperparams(out, cfg, segs, cell)
    res = run_coestimation(segs, hp, cell, ocv, cfg.filter_options())
    return res, hp, source, segs, ocv


def cmd_estimate(cfg: RunConfig, out: Path, args) -> Writer:
    res, hp, source, segs, _ = _estimate(cfg, out)
    est = res.estimate()
    w = Writer(out, "estimate", cfg)
    d = res.diagnostics
    meta = {"hyperparams": source, "nlml": d.nlml, "soc_clamps": d.soc_clamps, "psd_repairs": d.psd_repairs,
            "max_asymmetry": d.max_asymmetry, "min_eig_ratio": d.min_eig_ratio}
    write_estimate(w, est, meta=meta)
    truth = _truth(out)
    if truth is not None:
        errs = capacity_errors(est.capacity_mean, truth["capacity_ah"])
        w.table("estimate_errors.csv", ["rmse_ah", "mape_pct"], [(errs["rmse"], errs["mape"])])
    if args.figures:
        from . import plotting
        plotting.capacity_figure(w.out / "capacity.png", est.ages, est.capacity_mean, est.capacity_var, est.flags,
                                 truth=None if truth is None else (truth["end_age_days"], truth["capacity_ah"]))
        first = est.grid[:, 1] == est.grid[0, 1]
        plotting.resistance_figure(w.out / "resistance.png", est.ages, est.grid[first, 0], est.r0_mean[:, first])
    return w


def cmd_predict(cfg: RunConfig, out: Path, args) -> Writer:
    res, hp, source, segs, _ = _estimate(cfg, out)
    p = cfg.predict
    horizon, step = float(p["horizon_days"]), float(p["step_days"])
    n = int(np.floor(horizon / step + 1e-9))
    horizons = np.append(np.arange(n + 1) * step, [horizon] if horizon - n * step > 1e-9 else [])
    est = predict_future(res.model, res.filtered_means[-1], res.filtered_covs[-1], res.segment_ends[-1], horizons)
    est.flags = [res.roles[-1] if h == 0 else "extrapolated" for h in horizons]
    w = Writer(out, "predict", cfg)
    write_estimate(w, est, prefix="prediction_", meta={"hyperparams": source, "start_age_days": res.segment_ends[-1]})
    if args.figures:
        from . import plotting
        full = res.estimate()
        plotting.capacity_figure(w.out / "prediction.png", est.ages, est.capacity_mean, est.capacity_var, est.flags,
                                 label="prediction", extra=[(full.ages, full.capacity_mean, "estimate")])
    return w


def cmd_dva(cfg: RunConfig, out: Path, args) -> Writer:
    res, hp, source, segs, ocv = _estimate(cfg, out)
    est = res.estimate()
    d = cfg.dva
    w = Writer(out, "dva", cfg)
    curves = [dirdq_from_estimates(est, j, float(d["i_ref"]), n_points=int(d["n_points"]),
                                   window_cells=float(d["window_cells"])) for j in range(len(est.ages))]
    meta = {"i_ref": d["i_ref"], "window_cells": d["window_cells"], "order": curves[0].order}
    w.table("dirdq_curves.csv", ["age_days", "discharge_ah", "value_v_per_ah"],
            [(c.age, x, y) for c in curves for x, y in zip(c.discharge_ah, c.value)], meta)
    track = track_peaks(curves, rel_prominence=float(d["rel_prominence"]), polarity=float(d["polarity"]))
    modes = {"estimated": degradation_modes(track, float(est.capacity_mean[0]), int(d["anchor"]),
                                            tuple(int(v) for v in d["pair"]))}
    tracks = {"estimated": track}
    all_curves = {"estimated": curves}

    rpt_dir = Path(out) / "rpt"
    rpts = sorted(rpt_dir.glob("segment_*.csv")) if rpt_dir.exists() else []
    if rpts:
        rpt_segs = sorted((read_segment(p) for p in rpts), key=lambda s: s.age)
        rcurves = [dvdq_from_discharge(s.voltage, s.current, np.diff(s.t, prepend=s.t[0]),
                                       window=int(d["rpt_window"]), age=s.age) for s in rpt_segs]
        w.table("dvdq_rpt_curves.csv", ["age_days", "discharge_ah", "value_v_per_ah"],
                [(c.age, x, y) for c in rcurves for x, y in zip(c.discharge_ah, c.value)],
                {"window": rcurves[0].window, "order": rcurves[0].order})
        rtrack = track_peaks(rcurves, rel_prominence=float(d["rel_prominence"]), polarity=float(d["polarity"]))
        tracks["rpt"] = rtrack
        all_curves["rpt"] = rcurves
        modes["rpt"] = degradation_modes(rtrack, rcurves[0].capacity, int(d["anchor"]),
                                         tuple(int(v) for v in d["pair"]))
        if len(rpt_segs) >= 3 and len(rpt_segs) == len(est.ages):
            # pseudo-OCV drift against the first RPT, on the estimator's SOC grid
            pocv = [calibrate_ocv(s.t, s.current, s.voltage) for s in rpt_segs]
            soc = est.grid[:, 0]
            # dividing by the (signed) reference current puts dOCV in resistance units
            docv = np.array([p(soc) - pocv[0](soc) for p in pocv]) / float(d["i_ref"])
            coef = correlate_r0_docv(est.r0_mean, docv)
            w.table("correlation.csv", ["soc", "current_a", "pearson_r"], zip(soc, est.grid[:, 1], coef),
                    {"docv_scaling": "1/i_ref"})
            if args.figures:
                from . import plotting
                plotting.correlation_figure(w.out / "correlation.png", soc, coef)

    rows = []
    for src, tr in tracks.items():
        for a in range(len(tr.ages)):
            for j, pid in enumerate(tr.ids):
                if np.isfinite(tr.positions[a, j]):
                    rows.append((src, tr.ages[a], pid, tr.positions[a, j], tr.prominences[a, j], tr.resolution[a]))
    w.table("peaks.csv", ["source", "age_days", "peak_id", "position_ah", "prominence", "resolution_ah"], rows,
            {"polarity": d["polarity"], "rel_prominence": d["rel_prominence"]})
    rows = [(src, a, l, lu, m, mu) for src, md in modes.items()
            for a, l, lu, m, mu in zip(md.ages, md.lli, md.lli_unc, md.lam_n, md.lam_n_unc)]
    w.table("modes.csv", ["source", "age_days", "lli_pct", "lli_unc_pct", "lam_n_pct", "lam_n_unc_pct"], rows,
            {"anchor": d["anchor"], "pair": " ".join(str(v) for v in d["pair"])})
    if args.figures:
        from . import plotting
        plotting.curves_figure(w.out / "dirdq.png", curves, "d[I R0]/dQ (V/Ah)")
        if "rpt" in all_curves:
            plotting.curves_figure(w.out / "dvdq_rpt.png", all_curves["rpt"], "dV/dQ (V/Ah)")
        plotting.modes_figure(w.out / "modes.png", modes)
    return w


def cmd_baseline(cfg: RunConfig, out: Path, args) -> Writer:
    segs, ocv = _load_inputs(out)
    cell = cfg.cell_config()
    opts = cfg.filter_options()
    hp, source = _load_hyperparams(out, cfg, segs, cell)
    train = _train_split(segs, cfg, args.train_segments)
    b = cfg.baseline
    rw, table = tune_dual(train, ocv, cell, hp.noise_var, b["grid_q"], b["grid_r"], opts)
    res = run_dual_estimation(segs, rw, ocv, cell, hp.noise_var, opts)
    w = Writer(out, "baseline", cfg)
    w.table("baseline_tuning.csv", ["rel_q_per_day", "rel_r_per_day", "nlml"], table,
            {"noise_var": hp.noise_var, "noise_source": source})
    write_estimate(w, res.estimate, prefix="baseline_",
                   meta={"nlml": res.nlml, "diverged_segments": sum(res.diverged)})
    truth = _truth(out)
    if truth is not None:
        rows = []
        errs = capacity_errors(res.estimate.capacity_mean, truth["capacity_ah"])
        rows.append(("random_walk", errs["rmse"], errs["mape"]))
        gp = run_coestimation(segs, hp, cell, ocv, opts).estimate()
        errs = capacity_errors(gp.capacity_mean, truth["capacity_ah"])
        rows.append(("gp", errs["rmse"], errs["mape"]))
        w.table("comparison.csv", ["method", "rmse_ah", "mape_pct"], rows)
    if args.figures:
        from . import plotting
        e = res.estimate
        plotting.capacity_figure(w.out / "baseline_capacity.png", e.ages, e.capacity_mean, e.capacity_var,
                                 label="random-walk dual EKF",
                                 truth=None if truth is None else (truth["end_age_days"], truth["capacity_ah"]))
    return w


COMMANDS = {
    "prepare": (cmd_prepare, "extract discharge segments and the OCV curve from a cycling log"),
    "synth": (cmd_synth, "generate a synthetic benchmark cell"),
    "fit": (cmd_fit, "fit GP hyperparameters on the training segments"),
    "estimate": (cmd_estimate, "co-estimate capacity and resistance for every segment"),
    "predict": (cmd_predict, "extrapolate capacity and resistance past the last segment"),
    "dva": (cmd_dva, "differential-voltage curves, peak tracks and degradation modes"),
    "baseline": (cmd_baseline, "random-walk dual-EKF benchmark"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="TOML run configuration")
        p.add_argument("--out", type=Path, required=True, help="output directory (also the input for later steps)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--train-segments", type=int, default=None, dest="train_segments")
        p.add_argument("--grid-nz", type=int, default=None, dest="grid_nz")
        p.add_argument("--grid-ni", type=int, default=None, dest="grid_ni")
        p.add_argument("--horizon-days", type=float, default=None, dest="horizon_days")
        p.add_argument("--figures", action="store_true", help="also render PNG figures next to the tables")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_config(args.config, vars(args))
        func = COMMANDS[args.command][0]
        w = func(cfg, args.out, args)
        for path in w.written:
            logger.info("wrote %s", path)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AgingEcmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
