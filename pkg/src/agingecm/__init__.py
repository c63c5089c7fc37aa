"""Aging-aware equivalent circuit model with state-space Gaussian-process parameter dynamics.

Capacity and the operating-point-dependent series resistance are modelled as
Wiener-velocity processes in cell age (with a Matern surface over SOC and
current for the resistance), filtered jointly with SOC by an extended Kalman
filter over discharge segments.
"""

__version__ = "0.1.0"

from .ecm import CellConfig, OcvCurve  # noqa: E402
from .errors import AgingEcmError, ConfigError, DataError, NumericalError  # noqa: E402
from .estimator import FilterOptions, HealthEstimate, predict_future, run_coestimation  # noqa: E402
from .params import HyperParams  # noqa: E402

__all__ = [
    "__version__", "CellConfig", "OcvCurve", "AgingEcmError", "ConfigError", "DataError", "NumericalError",
    "FilterOptions", "HealthEstimate", "HyperParams", "predict_future", "run_coestimation",
]
