"""Realized measures from intraday log prices and their error variance.

``error_variance_c`` gives the variance of the proxy error ``proxy - IV``
under each correction mode; the estimator adds it to the lag-0 raw
second moment.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ._quadrature import graded_rule
from .model_core import CovKernel, FsvParams

__all__ = [
    "CorrectionMode",
    "IntradayDay",
    "realized_variance",
    "bipower_variation",
    "truncated_rv",
    "error_variance_c",
    "kernel_error_variance",
    "daily_measures",
    "BV_CLT_CONSTANT",
]

# asymptotic variance constant of bipower variation, pi^2/4 + pi - 3
BV_CLT_CONSTANT = math.pi**2 / 4 + math.pi - 3
MU1_SQ_INV = math.pi / 2
TRUNCATION_EXPONENT = 0.49


class CorrectionMode(str, enum.Enum):
    NONE = "none"
    CLT_RV = "clt-rv"
    EXACT_RV = "exact-rv"
    CLT_BV = "clt-bv"

    @classmethod
    def parse(cls, value) -> "CorrectionMode":
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"cltrv": "clt-rv", "exactrv": "exact-rv", "cltbv": "clt-bv"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class IntradayDay:
    """One trading day of equispaced log prices (n + 1 points)."""

    log_prices: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.log_prices, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("a day needs at least two log prices")
        if not np.all(np.isfinite(x)):
            raise ValueError("log prices must be finite (missing intraday points are not supported)")
        object.__setattr__(self, "log_prices", x)

    @property
    def n(self) -> int:
        return self.log_prices.size - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.log_prices)


def _as_day(day) -> IntradayDay:
    return day if isinstance(day, IntradayDay) else IntradayDay(day)


def realized_variance(day) -> float:
    r = _as_day(day).increments
    return float(np.dot(r, r))


def bipower_variation(day) -> float:
    day = _as_day(day)
    if day.n < 2:
        raise ValueError("bipower variation needs at least two increments")
    a = np.abs(day.increments)
    return float(MU1_SQ_INV * np.dot(a[1:], a[:-1]))


def truncated_rv(day, threshold_mult: float = 4.0) -> float:
    """Realized variance over increments below ``c * sqrt(BV) * n^-0.49``."""
    if threshold_mult <= 0:
        raise ValueError("threshold_mult must be positive")
    day = _as_day(day)
    r = day.increments
    cut = threshold_mult * math.sqrt(bipower_variation(day)) * day.n ** (-TRUNCATION_EXPONENT)
    keep = np.abs(r) <= cut
    return float(np.dot(r[keep], r[keep]))


def daily_measures(increments: np.ndarray, threshold_mult: float = 4.0) -> dict[str, np.ndarray]:
    """RV, BV and truncated RV for a (days, n) block of intraday returns."""
    r = np.asarray(increments, dtype=float)
    n = r.shape[1]
    rv = np.einsum("ij,ij->i", r, r)
    a = np.abs(r)
    bv = MU1_SQ_INV * np.einsum("ij,ij->i", a[:, 1:], a[:, :-1])
    cut = threshold_mult * np.sqrt(bv) * n ** (-TRUNCATION_EXPONENT)
    tr = np.where(a <= cut[:, None], r * r, 0.0).sum(axis=1)
    return {"rv": rv, "bv": bv, "trv": tr}


def kernel_error_variance(kernel: CovKernel, xi: float, n: int, mode) -> float:
    """Measurement-error variance for any kernel; see :func:`error_variance_c`."""
    mode = CorrectionMode.parse(mode)
    if n < 1:
        raise ValueError("n must be a positive integer")
    k0 = kernel.variance
    if mode is CorrectionMode.CLT_RV:
        return 2.0 * xi**2 * math.exp(k0) / n
    if mode is CorrectionMode.CLT_BV:
        return BV_CLT_CONSTANT * xi**2 * math.exp(k0) / n
    if mode is CorrectionMode.EXACT_RV:
        y, w = graded_rule(0.0, 1.0, "left")
        integral = float(np.dot(w, (1.0 - y) * np.exp(kernel.kappa(y / n))))
        return 4.0 * xi**2 / n * integral
    raise ValueError("no error variance for correction mode 'none'")


def error_variance_c(params: FsvParams, n: int, mode) -> float:
    """Variance of the realized-measure error for the fSV model.

    CLT RV: ``2 xi^2 e^{kappa(0)} / n``; exact RV (no drift or leverage):
    ``4 xi^2 / n int_0^1 (1 - y) e^{kappa(y/n)} dy``; CLT BV: the CLT RV
    value times ``(pi^2/4 + pi - 3) / 2``.
    """
    return kernel_error_variance(CovKernel.fsv(params), params.xi, n, mode)
