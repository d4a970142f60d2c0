"""Parameter types and log-variance autocovariance kernels.

The fractional SV (fSV) model drives log spot variance with a stationary
fractional Ornstein-Uhlenbeck process; the Gamma-BSS model uses a Brownian
semistationary process with a gamma kernel.  Both expose ``kappa(ell)``, the
autocovariance of log variance at a lag measured in days.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

__all__ = [
    "FsvParams",
    "GbssParams",
    "CovKernel",
    "QuadratureError",
    "kappa_fou",
    "kappa_fou_fast",
    "kappa_zero",
    "kappa_gbss",
    "kappa_tail_rate",
]

# |H - 1/2| below this uses the exponential closed form
HALF_TOL = 1e-12


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class FsvParams:
    """fSV parameter vector (xi, lambda, nu, H), all in daily units."""

    xi: float
    lam: float
    nu: float
    hurst: float

    def __post_init__(self):
        for name in ("xi", "lam", "nu", "hurst"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.xi <= 0:
            raise ValueError(f"xi must be positive, got {self.xi}")
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.nu <= 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not 0.0 < self.hurst < 1.0:
            raise ValueError(f"hurst must lie in (0, 1), got {self.hurst}")

    def as_array(self) -> np.ndarray:
        return np.array([self.xi, self.lam, self.nu, self.hurst])

    @classmethod
    def from_array(cls, theta) -> "FsvParams":
        xi, lam, nu, hurst = (float(v) for v in theta)
        return cls(xi, lam, nu, hurst)

    def to_dict(self) -> dict:
        return {"xi": self.xi, "lambda": self.lam, "nu": self.nu, "hurst": self.hurst}


@dataclass(frozen=True)
class GbssParams:
    """Gamma-BSS parameters with kernel h(x) = x**alpha * exp(-lam * x)."""

    xi: float
    lam: float
    nu: float
    alpha: float

    def __post_init__(self):
        if not (self.xi > 0 and self.lam > 0 and self.nu > 0):
            raise ValueError("xi, lambda and nu must be positive")
        if not self.alpha > -0.5:
            raise ValueError(f"alpha must exceed -1/2, got {self.alpha}")


def _check_lag(ell: float) -> float:
    ell = float(ell)
    if not ell >= 0:
        raise ValueError(f"lag must be non-negative, got {ell}")
    return ell


def kappa_zero(params: FsvParams) -> float:
    """Stationary variance of the fOU log-variance process."""
    p = 2.0 * params.hurst
    return params.nu**2 * math.gamma(1.0 + p) / (2.0 * params.lam**p)


def _kappa_half(params: FsvParams, ell):
    return params.nu**2 / (2.0 * params.lam) * np.exp(-params.lam * np.asarray(ell, dtype=float))


def kappa_fou(params: FsvParams, ell: float, tol: float = 1e-10) -> float:
    """fOU autocovariance at lag ``ell`` by adaptive quadrature.

    Evaluates ``nu^2 / (2 lam^{2H}) * (1/2 int e^{-|y|} |a + y|^{2H} dy - a^{2H})``
    with ``a = lam * ell``.  The integrand is integrated as the difference
    ``|a + y|^{2H} - a^{2H}`` to avoid cancellation at large ``a``; the real
    line is split at ``-a`` and ``0`` and both exponential tails are mapped
    to ``(0, 1]`` via ``u = exp(-|s|)``.

    Raises
    ------
    QuadratureError
        If the summed error estimate exceeds ``tol`` (scaled by
        ``max(1, kappa(0))``).
    """
    ell = _check_lag(ell)
    if abs(params.hurst - 0.5) < HALF_TOL:
        return float(_kappa_half(params, ell))
    return _kappa_fou_quad(params, ell, tol)


def _kappa_fou_quad(params: FsvParams, ell: float, tol: float = 1e-10) -> float:
    # general-H quadrature; also valid at H = 1/2, where it checks the closed form
    p = 2.0 * params.hurst
    a = params.lam * ell
    ap = a**p

    def diff(z):
        # |z|^p - a^p without cancellation for z near a
        if a > 0 and z > 0:
            return ap * math.expm1(p * math.log1p((z - a) / a))
        return abs(z) ** p - ap

    # y in (-a, 0): weight e^{y}
    def mid(y):
        return math.exp(y) * diff(a + y)

    # y > 0 mapped with u = e^{-y}
    def right(u):
        return diff(a - math.log(u))

    # y < -a, y = -a - s, u = e^{-s}; carries a factor e^{-a}
    def left(u):
        return diff(-math.log(u))

    opts = dict(epsabs=tol / 4, epsrel=1e-12, limit=400)
    total, err = integrate.quad(right, 0.0, 1.0, **opts)
    v, e = integrate.quad(left, 0.0, 1.0, **opts)
    total += math.exp(-a) * v
    err += math.exp(-a) * e
    if a > 0:
        v, e = integrate.quad(mid, -a, 0.0, **opts)
        total += v
        err += e
    scale = params.nu**2 / (2.0 * params.lam**p)
    # absolute tolerance in units of kappa(0), plus a rounding floor for huge lags
    if scale * err > tol * max(1.0, kappa_zero(params)) + 1e-9 * scale * abs(total):
        raise QuadratureError(f"fOU autocovariance quadrature at lag {ell}", scale * err)
    return scale * 0.5 * total


def kappa_fou_fast(params: FsvParams, ell) -> np.ndarray:
    """Vectorised fOU autocovariance via incomplete gamma functions.

    With ``a = lam * ell`` and ``p = 2H`` the defining integral splits into

    ``e^{-a} Gamma(p+1) + a^{p+1}/(p+1) 1F1(1; p+2; -a) + e^{a} Gamma(p+1, a)``

    (times 1/2).  Agrees with :func:`kappa_fou` to ~1e-10 relative for the
    lags used by the estimator and is what the moment code calls.
    """
    ell = np.asarray(ell, dtype=float)
    if abs(params.hurst - 0.5) < HALF_TOL:
        return _kappa_half(params, ell)
    return _kappa_fou_gamma(params, ell)


def _kappa_fou_gamma(params: FsvParams, ell: np.ndarray) -> np.ndarray:
    p = 2.0 * params.hurst
    a = params.lam * ell
    g = math.gamma(p + 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        upper = np.exp(a) * g * special.gammaincc(p + 1.0, a)
        # far tail: e^a Gamma(p+1, a) ~ a^p (1 + p/a + p(p-1)/a^2 + ...)
        big = a > 600.0
        if np.any(big):
            ab = a[big] if a.ndim else a
            upper_big = ab**p * (1.0 + p / ab + p * (p - 1.0) / ab**2 + p * (p - 1.0) * (p - 2.0) / ab**3)
            if a.ndim:
                upper[big] = upper_big
            else:
                upper = upper_big
        inner = a ** (p + 1.0) / (p + 1.0) * special.hyp1f1(1.0, p + 2.0, -a)
        total = 0.5 * (np.exp(-a) * g + inner + upper) - a**p
    return params.nu**2 / (2.0 * params.lam**p) * total


def kappa_gbss(params: GbssParams, ell):
    """Gamma-BSS autocovariance; Bessel-K form for positive lags.

    Raises
    ------
    OverflowError
        If the Bessel evaluation is not finite.
    """
    ell_arr = np.asarray(ell, dtype=float)
    if np.any(ell_arr < 0):
        raise ValueError("lag must be non-negative")
    a, lam, nu = params.alpha, params.lam, params.nu
    k0 = nu**2 * math.gamma(2 * a + 1) / (2 * lam) ** (2 * a + 1)
    pos = ell_arr > 0
    safe = np.where(pos, ell_arr, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        kv = special.kv(a + 0.5, lam * safe)
        vals = nu**2 * math.gamma(a + 1) / math.sqrt(math.pi) * (safe / (2 * lam)) ** (a + 0.5) * kv
    out = np.where(pos, vals, k0)
    if not np.all(np.isfinite(out)):
        raise OverflowError("Bessel K evaluation overflowed for Gamma-BSS kernel")
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CovKernel:
    """Autocovariance kernel of log variance for one model.

    ``model`` is one of ``"fsv"``, ``"gbss"`` or ``"const"`` (kappa == 0).
    ``kappa`` is vectorised and is the evaluation used by the moment code;
    ``kappa_reference`` is the slow quadrature route for the fSV model.
    """

    model: str
    params: FsvParams | GbssParams | None = None
    tol: float = 1e-10
    _k0: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self):
        if self.model not in ("fsv", "gbss", "const"):
            raise ValueError(f"unknown kernel model {self.model!r}")
        if self.model == "fsv" and not isinstance(self.params, FsvParams):
            raise TypeError("fsv kernel needs FsvParams")
        if self.model == "gbss" and not isinstance(self.params, GbssParams):
            raise TypeError("gbss kernel needs GbssParams")
        object.__setattr__(self, "_k0", float(self.kappa(0.0)))

    @classmethod
    def fsv(cls, params: FsvParams, tol: float = 1e-10) -> "CovKernel":
        return cls("fsv", params, tol)

    @classmethod
    def gbss(cls, params: GbssParams) -> "CovKernel":
        return cls("gbss", params)

    @classmethod
    def constant(cls) -> "CovKernel":
        return cls("const")

    @property
    def variance(self) -> float:
        return self._k0

    def kappa(self, ell):
        if self.model == "fsv":
            if np.ndim(ell) == 0:
                if ell == 0:
                    return kappa_zero(self.params)
                return float(kappa_fou_fast(self.params, ell))
            out = kappa_fou_fast(self.params, ell)
            out[np.asarray(ell) == 0] = kappa_zero(self.params)
            return out
        if self.model == "gbss":
            return kappa_gbss(self.params, ell)
        return np.zeros_like(np.asarray(ell, dtype=float)) if np.ndim(ell) else 0.0

    def kappa_reference(self, ell: float) -> float:
        if self.model == "fsv":
            return kappa_fou(self.params, ell, self.tol)
        return float(self.kappa(ell))


def kappa_tail_rate(kernel: CovKernel) -> tuple[float, float]:
    """Tail exponents (beta, rho) with kappa(l) ~ l^{-beta} e^{-rho l} L(l)."""
    if kernel.model == "fsv":
        h = kernel.params.hurst
        if abs(h - 0.5) < HALF_TOL:
            return 0.0, kernel.params.lam
        return 2.0 * (1.0 - h), 0.0
    if kernel.model == "gbss":
        return kernel.params.alpha, kernel.params.lam
    raise ValueError("tail rate is defined for fsv and gbss kernels only")
