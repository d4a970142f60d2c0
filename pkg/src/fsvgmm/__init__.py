"""GMM estimation and exact simulation of fractional log-normal SV models."""
from __future__ import annotations

__version__ = "0.1.0"

from .model_core import CovKernel, FsvParams, GbssParams, QuadratureError  # noqa: E402
from .iv_moments import MomentSpec, MomentVector, model_moment_vector  # noqa: E402
from .measurement import CorrectionMode, error_variance_c  # noqa: E402
from .data_io import DataError, VolSeries, filter_outliers, load_series  # noqa: E402
from .simulate import SimConfig, SimOutput, simulate_fsv  # noqa: E402
from .estimator import GmmConfig, GmmFit, HacConfig, fit_gmm  # noqa: E402

__all__ = [
    "__version__",
    "CovKernel",
    "FsvParams",
    "GbssParams",
    "QuadratureError",
    "MomentSpec",
    "MomentVector",
    "model_moment_vector",
    "CorrectionMode",
    "error_variance_c",
    "DataError",
    "VolSeries",
    "filter_outliers",
    "load_series",
    "SimConfig",
    "SimOutput",
    "simulate_fsv",
    "GmmConfig",
    "GmmFit",
    "HacConfig",
    "fit_gmm",
]
