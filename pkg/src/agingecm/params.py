"""Learnable GP hyperparameters, stored in log space."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .kernels import MaternSpec

NAMES = ("wv_variance", "matern_variance", "lengthscale_soc", "lengthscale_current", "noise_var")


@dataclass(frozen=True)
class HyperParams:
    """The five learnable scalars.

    Attributes
    ----------
    wv_variance : float
        ``sigma_zeta^2`` in 1/day^3, drives both the capacity and resistance GPs.
    matern_variance : float
        ``sigma_s^2``, scales the (normalized) resistance surface.
    lengthscale_soc, lengthscale_current : float
        Matern lengthscales in SOC units and Amperes.
    noise_var : float
        Terminal-voltage measurement noise ``sigma_v^2`` in V^2.
    """

    wv_variance: float = 1e-3
    matern_variance: float = 0.25
    lengthscale_soc: float = 0.2
    lengthscale_current: float = 1.0
    noise_var: float = 1e-5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"hyperparameter {f.name} must be positive and finite, got {v!r}")

    @property
    def matern(self) -> MaternSpec:
        return MaternSpec(self.matern_variance, self.lengthscale_soc, self.lengthscale_current)

    def to_log(self) -> np.ndarray:
        return np.log([getattr(self, n) for n in NAMES])

    @classmethod
    def from_log(cls, theta) -> "HyperParams":
        theta = np.asarray(theta, dtype=float)
        return cls(**{n: float(np.exp(t)) for n, t in zip(NAMES, theta)})

    def as_dict(self) -> dict:
        return {n: getattr(self, n) for n in NAMES}

    def replace(self, **changes) -> "HyperParams":
        return replace(self, **changes)
