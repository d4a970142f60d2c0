"""Model-implied moments of daily integrated variance.

For a log-normal SV model with log-variance autocovariance ``kappa``,

    E[IV_t]           = xi
    E[IV_t IV_{t+l}]  = xi^2 int_0^1 (1 - y) [e^{kappa(l + y)} + e^{kappa(|l - y|)}] dy

and the third and fourth raw moments reduce to two- and three-dimensional
integrals over ordered simplices.  All integrals use fixed graded
Gauss-Legendre rules (see ``_quadrature``) so a moment vector is one
vectorised kernel evaluation followed by a weighted sum.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from ._quadrature import graded_rule, smooth_rule
from .measurement import CorrectionMode, kernel_error_variance
from .model_core import CovKernel

__all__ = [
    "DEFAULT_LAGS",
    "MomentSpec",
    "MomentVector",
    "mean_iv",
    "raw_second_moment_iv",
    "autocov_iv",
    "third_moment_iv",
    "fourth_moment_iv",
    "autocov_tail_approx",
    "lemma_a1_reduce",
    "model_moment_vector",
    "tail_weight",
]

DEFAULT_LAGS = (0, 1, 2, 3, 5, 20, 50)


@dataclass(frozen=True)
class MomentSpec:
    """Lag set and measurement-error correction for a moment vector."""

    lags: tuple[int, ...] = DEFAULT_LAGS
    correction: CorrectionMode = CorrectionMode.NONE
    n_intraday: int | None = None

    def __post_init__(self):
        lags = tuple(int(v) for v in self.lags)
        if not lags:
            raise ValueError("at least one lag is required")
        if any(v < 0 for v in lags):
            raise ValueError("lags must be non-negative")
        if any(b <= a for a, b in zip(lags, lags[1:])):
            raise ValueError("lags must be strictly increasing")
        object.__setattr__(self, "lags", lags)
        mode = CorrectionMode.parse(self.correction)
        object.__setattr__(self, "correction", mode)
        if mode is not CorrectionMode.NONE:
            if lags[0] != 0:
                raise ValueError("a measurement-error correction needs lag 0 in the lag set")
            if self.n_intraday is None or int(self.n_intraday) < 1:
                raise ValueError("n_intraday is required when a correction is applied")
        if self.n_intraday is not None:
            object.__setattr__(self, "n_intraday", int(self.n_intraday))

    @property
    def size(self) -> int:
        return len(self.lags) + 1

    @property
    def labels(self) -> list[str]:
        return ["mean"] + [f"m2_lag{v}" for v in self.lags]

    def to_dict(self) -> dict:
        return {
            "lags": list(self.lags),
            "correction": self.correction.value,
            "n_intraday": self.n_intraday,
        }


@dataclass(frozen=True)
class MomentVector:
    """``[E IV, E IV IV_{-l_1}, ..., E IV IV_{-l_k}]`` in lag order."""

    values: np.ndarray
    lags: tuple[int, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.lags) + 1,):
            raise ValueError("moment vector length must be number of lags + 1")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size

    def __getitem__(self, i):
        return self.values[i]


def mean_iv(kernel: CovKernel, xi: float) -> float:
    if not xi > 0:
        raise ValueError("xi must be positive")
    return float(xi)


def _lag_rule(ell: float):
    """Arguments of kappa and weights such that

    ``sum(w * expm1(kappa(args))) = int_0^1 (1 - y) [expm1(kappa(l + y)) + expm1(kappa(|l - y|))] dy``.
    """
    ell = float(ell)
    args, weights = [], []
    # kappa(l + y): singular at y = 0 only when l = 0
    y, w = graded_rule(0.0, 1.0, "left") if ell == 0 else smooth_rule(0.0, 1.0)
    args.append(ell + y)
    weights.append((1.0 - y) * w)
    # kappa(|l - y|): singular where y = l
    if ell == 0:
        pass
    elif ell < 1:
        y1, w1 = graded_rule(0.0, ell, "right")
        y2, w2 = graded_rule(ell, 1.0, "left")
        y, w = np.concatenate([y1, y2]), np.concatenate([w1, w2])
    elif ell == 1:
        y, w = graded_rule(0.0, 1.0, "right")
    else:
        y, w = smooth_rule(0.0, 1.0)
    args.append(np.abs(ell - y))
    weights.append((1.0 - y) * w)
    return np.concatenate(args), np.concatenate(weights)


@lru_cache(maxsize=256)
def _vector_rule(lags: tuple[int, ...]):
    pieces = [_lag_rule(v) for v in lags]
    sizes = [p[0].size for p in pieces]
    args = np.concatenate([p[0] for p in pieces])
    weights = np.concatenate([p[1] for p in pieces])
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    args.setflags(write=False)
    weights.setflags(write=False)
    return args, weights, bounds


def _centered_second_moments(kernel: CovKernel, lags: tuple[int, ...]) -> np.ndarray:
    args, weights, bounds = _vector_rule(lags)
    with np.errstate(over="ignore"):
        vals = weights * np.expm1(kernel.kappa(args))
    return np.add.reduceat(vals, bounds[:-1])


def autocov_iv(kernel: CovKernel, xi: float, ell: float) -> float:
    """``E[(IV_t - xi)(IV_{t+l} - xi)]``."""
    if ell < 0:
        raise ValueError("lag must be non-negative")
    args, weights = _lag_rule(ell)
    with np.errstate(over="ignore"):
        val = float(np.dot(weights, np.expm1(kernel.kappa(args))))
    return xi**2 * val


def raw_second_moment_iv(kernel: CovKernel, xi: float, ell: float) -> float:
    """``E[IV_t IV_{t+l}]``; depends on the lag only (stationarity)."""
    return xi**2 + autocov_iv(kernel, xi, ell)


def _h_warning(kernel: CovKernel):
    if kernel.model == "fsv" and kernel.params.hurst < 0.2:
        warnings.warn(
            "higher-order IV moments with H < 0.2 are slow to integrate accurately",
            RuntimeWarning,
            stacklevel=3,
        )


def third_moment_iv(kernel: CovKernel, xi: float) -> float:
    """``E[IV_t^3] = 6 xi^3 int_0^1 int_0^x (1 - x) f(x, y) dy dx``."""
    _h_warning(kernel)
    xs, wx = graded_rule(0.0, 1.0, "left", ratio=0.15, levels=16, order=10)
    total = 0.0
    for x, w in zip(xs, wx):
        ys, wy = graded_rule(0.0, x, "both", ratio=0.15, levels=16, order=10)
        expo = kernel.kappa(x - ys) + kernel.kappa(ys) + kernel.kappa(x)
        total += w * (1.0 - x) * np.dot(wy, np.exp(expo))
    return 6.0 * xi**3 * total


def fourth_moment_iv(kernel: CovKernel, xi: float) -> float:
    """``E[IV_t^4] = 24 xi^4 int_0^1 int_0^x int_0^y (1 - x) g(x, y, z) dz dy dx``."""
    _h_warning(kernel)
    grade = dict(ratio=0.15, levels=10, order=6)
    xs, wx = graded_rule(0.0, 1.0, "left", **grade)
    zu, wu = graded_rule(0.0, 1.0, "both", **grade)
    total = 0.0
    for x, w in zip(xs, wx):
        ys, wy = graded_rule(0.0, x, "both", **grade)
        # z in [0, y] for every y at once
        zs = ys[:, None] * zu[None, :]
        wz = ys[:, None] * wu[None, :]
        kx = kernel.kappa(x)
        ky = kernel.kappa(ys)[:, None]
        kxy = kernel.kappa(x - ys)[:, None]
        expo = (
            kernel.kappa(x - zs)
            + kernel.kappa(ys[:, None] - zs)
            + kernel.kappa(zs)
            + kx
            + ky
            + kxy
        )
        inner = np.sum(wz * np.exp(expo), axis=1)
        total += w * (1.0 - x) * np.dot(wy, inner)
    return 24.0 * xi**4 * total


def tail_weight(rho: float) -> float:
    """``int_{-1}^{1} (1 - |y|) e^{-rho y} dy``."""
    if rho == 0:
        return 1.0
    return math.exp(-rho) * math.expm1(rho) ** 2 / rho**2


def autocov_tail_approx(kernel: CovKernel, xi: float, ell: float) -> float:
    """Large-lag equivalent of :func:`autocov_iv`.

    fSV with H != 1/2 uses ``xi^2 kappa(l)``; H = 1/2 multiplies by the
    exponential tail weight; Gamma-BSS uses the explicit Bessel asymptote
    ``nu^2 xi^2 Gamma(a+1) (e^lam - 1)^2 / (2^{a+1} lam^{a+3}) l^a e^{-lam(l+1)}``.
    """
    if ell < 1:
        raise ValueError("the tail approximation needs lag >= 1")
    if kernel.model == "const":
        return 0.0
    if kernel.model == "gbss":
        p = kernel.params
        a, lam = p.alpha, p.lam
        coef = p.nu**2 * xi**2 * math.gamma(a + 1) * math.expm1(lam) ** 2 / (2 ** (a + 1) * lam ** (a + 3))
        return coef * ell**a * math.exp(-lam * (ell + 1))
    from .model_core import kappa_tail_rate

    _, rho = kappa_tail_rate(kernel)
    return xi**2 * float(kernel.kappa(ell)) * tail_weight(rho)


def lemma_a1_reduce(f, k: int, epsrel: float = 1e-12) -> float:
    """``int_0^1 (1 - y) (f(|k-1-y|) + f(k-1+y)) dy``.

    Equals the double integral of ``f(|s - t|)`` over ``[k-1, k] x [0, 1]``.
    """
    k = int(k)
    if k < 1:
        raise ValueError("k must be a positive integer")

    def g(y):
        return (1.0 - y) * (float(f(abs(k - 1 - y))) + float(f(k - 1 + y)))

    val, err = integrate.quad(g, 0.0, 1.0, epsabs=0.0, epsrel=epsrel, limit=500)
    if not np.isfinite(val):
        raise ArithmeticError("double-integral reduction did not converge")
    return val


def model_moment_vector(kernel: CovKernel, xi: float, spec: MomentSpec) -> MomentVector:
    """Corrected model moment vector ``G(theta) + (0, c(theta), 0, ...)``."""
    centered = _centered_second_moments(kernel, spec.lags)
    values = np.empty(spec.size)
    values[0] = xi
    values[1:] = xi**2 * (1.0 + centered)
    if spec.correction is not CorrectionMode.NONE:
        values[1] += kernel_error_variance(kernel, xi, spec.n_intraday, spec.correction)
    return MomentVector(values, spec.lags)
