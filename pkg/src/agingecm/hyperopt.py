"""Outer loop: minimize the filter's accumulated NLML over the GP hyperparameters.

The search runs in log space with L-BFGS-B. Gradients are central finite
differences (step ``1e-3`` in log units) so every gradient costs two filter
runs per free parameter; the evaluation budget counts all of them.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .ecm import CellConfig, OcvCurve
from .errors import AgingEcmError, NumericalError
from .estimator import FilterOptions, run_coestimation
from .params import NAMES, HyperParams

logger = logging.getLogger(__name__)

FD_STEP = 1e-3
BOUND_WIDTH = 6.0
# finite stand-in for +inf so the quasi-Newton line search can back off
INFEASIBLE_PENALTY = 1e12

__all__ = [
    "HyperParams", "Bounds", "TraceRow", "OptimizeResult", "heuristic_init", "default_bounds",
    "nlml_objective", "optimize", "FD_STEP",
]


@dataclass(frozen=True)
class Bounds:
    """Box constraints on the log hyperparameters, ordered as :data:`agingecm.params.NAMES`."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.lower) != len(NAMES) or len(self.upper) != len(NAMES):
            raise ValueError(f"bounds need {len(NAMES)} entries")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("lower bound above upper bound")

    def pairs(self):
        return list(zip(self.lower, self.upper))

    def contains(self, theta, tol=1e-12) -> bool:
        theta = np.asarray(theta)
        return bool(np.all(theta >= np.asarray(self.lower) - tol) and np.all(theta <= np.asarray(self.upper) + tol))


def default_bounds(hp0: HyperParams, width: float = BOUND_WIDTH) -> Bounds:
    theta = hp0.to_log()
    return Bounds(tuple(theta - width), tuple(theta + width))


def heuristic_init(segments: Sequence, cell: CellConfig) -> HyperParams:
    """Data-driven starting point.

    ``noise_var`` comes from second differences of the voltage: for a smooth
    curve plus white noise, ``var(diff2(V)) ~ 6 sigma_v^2``. The remaining
    values are fixed conventions (``l_z = 0.2``, ``sigma_s^2 = 0.25``,
    ``sigma_zeta^2 = 1e-3``) and ``l_I`` is half the configured current range.
    """
    ests = []
    for seg in segments:
        v = np.asarray(seg.voltage, dtype=float)
        if v.size >= 5:
            ests.append(np.var(np.diff(v, 2)) / 6.0)
    noise = float(np.median(ests)) if ests else 1e-5
    noise = max(noise, 1e-10)
    lo, hi = cell.current_range
    span = abs(hi - lo)
    return HyperParams(
        wv_variance=1e-3,
        matern_variance=0.25,
        lengthscale_soc=0.2,
        lengthscale_current=0.5 * span if span > 0 else 1.0,
        noise_var=noise,
    )


def _sorted(segments):
    # stable sort keeps the objective independent of file order
    return sorted(segments, key=lambda s: float(s.age))


def nlml_objective(hp: HyperParams, segments: Sequence, cell: CellConfig, ocv: OcvCurve,
                   options: FilterOptions | None = None) -> float:
    """Accumulated NLML of the training segments; ``inf`` when the filter fails."""
    try:
        res = run_coestimation(_sorted(segments), hp, cell, ocv, options)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        logger.info("objective infeasible at %s: %s", hp.as_dict(), exc)
        return float("inf")
    phi = res.diagnostics.nlml
    return float(phi) if np.isfinite(phi) else float("inf")


def _eval_theta(args):
    theta, segments, cell, ocv, options = args
    try:
        hp = HyperParams.from_log(theta)
    except ValueError:
        return float("inf")
    return nlml_objective(hp, segments, cell, ocv, options)


@dataclass
class TraceRow:
    iteration: int
    evaluation: int
    hp: HyperParams
    phi: float
    best_phi: float
    wall_time: float


@dataclass
class OptimizeResult:
    hp: HyperParams
    phi: float
    hp0: HyperParams
    phi0: float
    trace: list = field(default_factory=list)
    n_evals: int = 0
    n_iterations: int = 0
    message: str = ""
    bounds: Bounds | None = None
    free: tuple = ()

    @property
    def improvement(self) -> float:
        return self.phi0 - self.phi


class _BudgetExhausted(Exception):
    pass


class _Objective:
    """Counts evaluations, keeps the trace and the best point, and enforces the budget."""

    def __init__(self, base_theta, free_idx, segments, cell, ocv, options, budget, workers):
        self.base = np.asarray(base_theta, dtype=float)
        self.free = np.asarray(free_idx, dtype=int)
        self.args = (list(segments), cell, ocv, options)
        self.budget = budget
        self.workers = workers
        self.trace: list[TraceRow] = []
        self.best_phi = np.inf
        self.best_theta = self.base.copy()
        self.iteration = 0
        self._memo: dict = {}
        self.t0 = time.perf_counter()
        self._pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def full(self, sub):
        theta = self.base.copy()
        theta[self.free] = sub
        return theta

    def _record(self, theta, phi):
        if phi < self.best_phi:
            self.best_phi, self.best_theta = phi, theta.copy()
        self.trace.append(TraceRow(self.iteration, len(self.trace), HyperParams.from_log(theta), phi,
                                   self.best_phi, time.perf_counter() - self.t0))

    def evaluate_many(self, subs):
        """Evaluate several points in order; results are recorded in submission order."""
        thetas = [self.full(s) for s in subs]
        todo = []
        for th in thetas:
            key = th.tobytes()
            if key not in self._memo and key not in todo:
                todo.append(key)
        remaining = self.budget - len(self.trace)
        if todo and remaining <= 0:
            raise _BudgetExhausted
        truncated = len(todo) > remaining
        todo = todo[:remaining]
        jobs = [(np.frombuffer(k),) + tuple(self.args) for k in todo]
        if self._pool is not None and len(jobs) > 1:
            phis = list(self._pool.map(_eval_theta, jobs))
        else:
            phis = [_eval_theta(j) for j in jobs]
        for key, phi in zip(todo, phis):
            self._memo[key] = phi
            self._record(np.frombuffer(key).copy(), phi)
        if truncated:
            raise _BudgetExhausted
        return [self._memo[th.tobytes()] for th in thetas]

    def value_and_grad(self, sub, step):
        sub = np.asarray(sub, dtype=float)
        points = [sub]
        for k in range(sub.size):
            for sgn in (1.0, -1.0):
                p = sub.copy()
                p[k] += sgn * step
                points.append(p)
        phis = self.evaluate_many(points)
        f0 = phis[0]
        grad = np.zeros(sub.size)
        for k in range(sub.size):
            fp, fm = phis[1 + 2 * k], phis[2 + 2 * k]
            if np.isfinite(fp) and np.isfinite(fm):
                grad[k] = (fp - fm) / (2.0 * step)
            elif np.isfinite(f0) and np.isfinite(fp):
                grad[k] = (fp - f0) / step
            elif np.isfinite(f0) and np.isfinite(fm):
                grad[k] = (f0 - fm) / step
        self.iteration += 1
        if not np.isfinite(f0):
            # push back toward the start point, where the filter is known to work
            return INFEASIBLE_PENALTY, INFEASIBLE_PENALTY * np.sign(sub - self.base[self.free])
        return f0, grad


def optimize(hp0: HyperParams, segments: Sequence, cell: CellConfig, ocv: OcvCurve,
             bounds: Bounds | None = None, budget: int = 200, options: FilterOptions | None = None,
             fd_step: float = FD_STEP, workers: int = 1, fixed: Sequence[str] | None = None,
             max_iterations: int = 100) -> OptimizeResult:
    """Bounded L-BFGS-B search for the NLML minimizer.

    Parameters
    ----------
    budget : int
        Maximum number of filter runs (objective evaluations, including the
        finite-difference ones). Must be at least 1.
    fixed : names of hyperparameters held at ``hp0``. By default
        ``lengthscale_current`` is held when the grid has a single current,
        since the objective does not depend on it there.
    workers : int
        Processes used for the finite-difference evaluations; results are
        gathered in a fixed order so traces do not depend on scheduling.

    Returns the best evaluated point, so ``phi <= phi0`` always holds.
    """
    if budget < 1:
        raise ValueError("budget must allow at least one evaluation")
    if not segments:
        raise AgingEcmError("no training segments")
    bounds = bounds or default_bounds(hp0)
    theta0 = hp0.to_log()
    if not bounds.contains(theta0):
        raise ValueError("initial hyperparameters lie outside the bounds")
    if fixed is None:
        fixed = ("lengthscale_current",) if cell.n_current == 1 else ()
    unknown = set(fixed) - set(NAMES)
    if unknown:
        raise ValueError(f"unknown hyperparameter names {sorted(unknown)}")
    free = [k for k, n in enumerate(NAMES) if n not in fixed]

    obj = _Objective(theta0, free, _sorted(segments), cell, ocv, options, budget, workers)
    message = ""
    try:
        phi0 = obj.evaluate_many([theta0[free]])[0]
        if not np.isfinite(phi0):
            raise NumericalError("objective is infeasible at the initial hyperparameters")
        if free and budget > 1:
            res = minimize(
                lambda s: obj.value_and_grad(s, fd_step),
                theta0[free],
                jac=True,
                method="L-BFGS-B",
                bounds=[bounds.pairs()[k] for k in free],
                options={"maxiter": max_iterations, "ftol": 1e-10, "gtol": 1e-6},
            )
            message = str(res.message)
    except _BudgetExhausted:
        message = "evaluation budget exhausted"
    finally:
        obj.close()

    if not np.isfinite(obj.best_phi):
        raise NumericalError(f"all {len(obj.trace)} evaluations were infeasible")
    logger.info("hyperopt: %d evaluations, phi %.6g -> %.6g (%s)", len(obj.trace), obj.trace[0].phi,
                obj.best_phi, message)
    return OptimizeResult(
        hp=HyperParams.from_log(obj.best_theta),
        phi=float(obj.best_phi),
        hp0=hp0,
        phi0=float(obj.trace[0].phi),
        trace=obj.trace,
        n_evals=len(obj.trace),
        n_iterations=obj.iteration,
        message=message,
        bounds=bounds,
        free=tuple(NAMES[k] for k in free),
    )
