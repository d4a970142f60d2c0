"""Iterated GMM for the fSV model on a daily volatility proxy.

The moment conditions match the sample mean and the raw second moments
``T^-1 sum_t v_t v_{t-l}`` with the (optionally measurement-error
corrected) model moments from :mod:`fsvgmm.iv_moments`.  The first step
uses the identity weight, later steps the inverse of a Parzen-kernel HAC
estimate of the long-run covariance of the moment residuals.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, signal, special, stats

from . import __version__
from .data_io import DataError, VolSeries
from .iv_moments import MomentSpec, model_moment_vector
from .model_core import CovKernel, FsvParams

__all__ = [
    "PARAM_NAMES",
    "DEFAULT_BOUNDS",
    "KernelName",
    "HacConfig",
    "GmmConfig",
    "GmmFit",
    "EstimationError",
    "NumericalError",
    "sample_moment_vector",
    "moment_contributions",
    "initial_values",
    "gmm_objective",
    "model_moments",
    "moment_jacobian",
    "parzen",
    "bartlett",
    "andrews_bandwidth",
    "hac_covariance",
    "fit_gmm",
    "minimize_gmm",
    "standard_errors",
    "j_test",
    "hurst_ci_log",
]

PARAM_NAMES = ("xi", "lambda", "nu", "hurst")
DEFAULT_BOUNDS = ((1e-8, 10.0), (1e-8, 5.0), (1e-8, 20.0), (0.001, 0.999))
FD_REL_STEP = 1e-6
FD_ABS_FLOOR = 1e-8
COND_WARN = 1e10
RIDGE = 1e-12


class EstimationError(RuntimeError):
    """The optimizer could not produce a usable estimate."""


class NumericalError(ArithmeticError):
    """A linear-algebra or quadrature step failed."""


class KernelName(str, enum.Enum):
    PARZEN = "parzen"
    BARTLETT = "bartlett"


@dataclass(frozen=True)
class HacConfig:
    """HAC kernel and bandwidth; ``bandwidth`` is ``"andrews"`` or a fixed L >= 1."""

    kernel: KernelName = KernelName.PARZEN
    bandwidth: str | float = "andrews"

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelName(self.kernel))
        if isinstance(self.bandwidth, str):
            if self.bandwidth.lower() != "andrews":
                raise ValueError("bandwidth must be 'andrews' or a positive number")
            object.__setattr__(self, "bandwidth", "andrews")
        elif not self.bandwidth >= 1:
            raise ValueError("fixed bandwidth must be at least 1")

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.value, "bandwidth": self.bandwidth}


@dataclass(frozen=True)
class GmmConfig:
    spec: MomentSpec = field(default_factory=MomentSpec)
    max_iterations: int = 3
    tol: float = 1e-6
    bounds: tuple[tuple[float, float], ...] = DEFAULT_BOUNDS
    hac: HacConfig = field(default_factory=HacConfig)
    init_overrides: FsvParams | None = None
    restarts: int = 3
    seed: int = 0
    max_nfev: int = 400

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if len(self.bounds) != 4 or any(not lo < hi for lo, hi in self.bounds):
            raise ValueError("bounds need four (lower, upper) pairs with lower < upper")
        if self.bounds[3][0] <= 0 or self.bounds[3][1] >= 1:
            raise ValueError("hurst bounds must lie inside (0, 1)")

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "max_iterations": self.max_iterations,
            "tol": self.tol,
            "bounds": [list(b) for b in self.bounds],
            "hac": self.hac.to_dict(),
            "init_overrides": None if self.init_overrides is None else self.init_overrides.to_dict(),
            "restarts": self.restarts,
            "seed": self.seed,
        }


@dataclass
class GmmFit:
    theta: FsvParams
    vcov: np.ndarray
    se: np.ndarray
    j_stat: float
    j_dof: int
    j_pvalue: float
    objective_trace: list[float]
    weight_matrix: np.ndarray
    converged: bool
    n_obs: int
    initial: FsvParams
    theta_trace: list[list[float]] = field(default_factory=list)
    bandwidth: float = 0.0
    message: str = ""
    warnings: list[str] = field(default_factory=list)
    config: GmmConfig | None = None
    provenance: dict = field(default_factory=dict)

    def hurst_ci(self, level: float = 0.90) -> tuple[float, float]:
        return hurst_ci_log(self.theta.hurst, float(self.se[3]), level)

    def to_dict(self) -> dict:
        lo, hi = self.hurst_ci(0.90) if self.se[3] > 0 else (self.theta.hurst, self.theta.hurst)
        return {
            "theta": self.theta.to_dict(),
            "se": dict(zip(PARAM_NAMES, map(float, self.se))),
            "vcov": [float(v) for v in np.ravel(self.vcov)],
            "hurst_ci90_log": [lo, hi],
            "j_stat": self.j_stat,
            "j_dof": self.j_dof,
            "j_pvalue": self.j_pvalue,
            "objective_trace": list(self.objective_trace),
            "theta_trace": [list(t) for t in self.theta_trace],
            "weight_matrix": [float(v) for v in np.ravel(self.weight_matrix)],
            "converged": self.converged,
            "n_obs": self.n_obs,
            "initial": self.initial.to_dict(),
            "bandwidth": self.bandwidth,
            "message": self.message,
            "warnings": list(self.warnings),
            "config": None if self.config is None else self.config.to_dict(),
            "version": __version__,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmFit":
        th = d["theta"]
        ini = d["initial"]
        k = int(round(math.sqrt(len(d["weight_matrix"]))))
        return cls(
            theta=FsvParams(th["xi"], th["lambda"], th["nu"], th["hurst"]),
            vcov=np.array(d["vcov"]).reshape(4, 4),
            se=np.array([d["se"][n] for n in PARAM_NAMES]),
            j_stat=d["j_stat"],
            j_dof=d["j_dof"],
            j_pvalue=d["j_pvalue"],
            objective_trace=list(d["objective_trace"]),
            weight_matrix=np.array(d["weight_matrix"]).reshape(k, k),
            converged=d["converged"],
            n_obs=d["n_obs"],
            initial=FsvParams(ini["xi"], ini["lambda"], ini["nu"], ini["hurst"]),
            theta_trace=[list(t) for t in d.get("theta_trace", [])],
            bandwidth=d.get("bandwidth", 0.0),
            message=d.get("message", ""),
            warnings=list(d.get("warnings", [])),
            provenance=dict(d.get("provenance", {})),
        )


def _values(series) -> np.ndarray:
    v = series.values if isinstance(series, VolSeries) else np.asarray(series, dtype=float)
    return np.asarray(v, dtype=float)


def _check_length(v: np.ndarray, spec: MomentSpec):
    if v.size <= spec.lags[-1]:
        raise DataError(f"series shorter than maximum lag ({v.size} <= {spec.lags[-1]})")


def sample_moment_vector(series, spec: MomentSpec) -> np.ndarray:
    """``[mean, T^-1 sum_{t>l} v_t v_{t-l} for l in lags]`` (divisor T at every lag)."""
    v = _values(series)
    _check_length(v, spec)
    t = v.size
    out = np.empty(spec.size)
    out[0] = v.mean()
    for i, ell in enumerate(spec.lags, start=1):
        out[i] = np.dot(v[ell:], v[: t - ell]) / t
    return out


def moment_contributions(series, spec: MomentSpec) -> np.ndarray:
    """Per-day moment vectors ``(v_t, v_t v_{t-l_1}, ...)`` for ``t > max lag``."""
    v = _values(series)
    _check_length(v, spec)
    top = spec.lags[-1]
    rows = v.size - top
    out = np.empty((rows, spec.size))
    out[:, 0] = v[top:]
    for i, ell in enumerate(spec.lags, start=1):
        out[:, i] = v[top:] * v[top - ell : v.size - ell]
    return out


def _clamp(theta: np.ndarray, bounds) -> np.ndarray:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(theta, lo, hi)


def initial_values(series, q: float = 2.0, m: int = 6, bounds=DEFAULT_BOUNDS) -> FsvParams:
    """Scaling-law starting values.

    ``xi`` is the sample mean; ``H`` and ``nu`` come from OLS of
    ``ln gamma_h`` on ``ln h`` (h = 1..m), where ``gamma_h`` is the mean
    q-th absolute power of h-day log increments, slope ``qH`` and intercept
    ``ln(K_q nu^q)``; ``lambda`` matches the stationary variance of log
    variance to the sample variance of the log series.
    """
    v = _values(series)
    if v.size <= m + 1:
        raise DataError(f"series too short for the initializer (need more than {m + 1} points)")
    if np.any(v <= 0):
        raise DataError("initializer needs a strictly positive series")
    x = np.log(v)
    var_log = x.var()
    if not var_log > 0:
        raise DataError("log series has zero variance")
    t = x.size
    h = np.arange(1, m + 1)
    gam = np.array([np.sum(np.abs(x[k : t - m + k] - x[: t - m]) ** q) / (t - m) for k in h])
    if np.any(gam <= 0):
        raise DataError("degenerate scaling-law regression")
    slope, intercept = np.polyfit(np.log(h), np.log(gam), 1)
    k_q = 2 ** (q / 2) * special.gamma((q + 1) / 2) / math.sqrt(math.pi)
    hb, nb = bounds[3], bounds[2]
    hurst = float(np.clip(slope / q, hb[0], hb[1]))
    nu = float(np.clip((math.exp(intercept) / k_q) ** (1.0 / q), nb[0], nb[1]))
    lam = (nu**2 * math.gamma(1 + 2 * hurst) / (2 * var_log)) ** (1.0 / (2 * hurst))
    theta = _clamp(np.array([v.mean(), lam, nu, hurst]), bounds)
    return FsvParams.from_array(theta)


def model_moments(theta, spec: MomentSpec) -> np.ndarray:
    p = theta if isinstance(theta, FsvParams) else FsvParams.from_array(theta)
    return model_moment_vector(CovKernel.fsv(p), p.xi, spec).values


def _fd_steps(theta: np.ndarray, bounds) -> np.ndarray:
    h = np.maximum(FD_REL_STEP * np.abs(theta), FD_ABS_FLOOR)
    hi = np.array([b[1] for b in bounds])
    # step backwards when a forward step would leave the box
    return np.where(theta + h > hi, -h, h)


def moment_jacobian(theta, spec: MomentSpec, bounds=DEFAULT_BOUNDS, base=None) -> np.ndarray:
    """Forward-difference Jacobian of the model moments, shape (k, 4)."""
    th = np.asarray(theta.as_array() if isinstance(theta, FsvParams) else theta, dtype=float)
    g0 = model_moments(th, spec) if base is None else base
    steps = _fd_steps(th, bounds)
    jac = np.empty((g0.size, th.size))
    for j in range(th.size):
        tj = th.copy()
        tj[j] += steps[j]
        jac[:, j] = (model_moments(tj, spec) - g0) / steps[j]
    return jac


def gmm_objective(series, params, W: np.ndarray, spec: MomentSpec, sample=None) -> float:
    """``m' W m`` with ``m = sample moments - corrected model moments``."""
    g = sample_moment_vector(series, spec) if sample is None else np.asarray(sample, dtype=float)
    m = g - model_moments(params, spec)
    return float(m @ W @ m)


def parzen(x):
    x = np.abs(np.asarray(x, dtype=float))
    return np.where(x <= 0.5, 1 - 6 * x**2 + 6 * x**3, np.where(x <= 1, 2 * (1 - x) ** 3, 0.0))


def bartlett(x):
    x = np.abs(np.asarray(x, dtype=float))
    return np.where(x <= 1, 1 - x, 0.0)


def _arma11_css(x: np.ndarray) -> tuple[float, float]:
    """Conditional least squares ARMA(1,1): x_t = rho x_{t-1} + e_t + psi e_{t-1}.

    The MA term is kept only if it lowers BIC against the AR(1) fit; on
    near-white input the two roots otherwise cancel (rho ~ -psi) and the
    plug-in bandwidth explodes.
    """
    y, lag = x[1:], x[:-1]
    n = y.size
    rho0 = float(np.clip(np.dot(y, lag) / np.dot(lag, lag), -0.99, 0.99))
    ssr_ar = float(np.sum((y - rho0 * lag) ** 2))

    def resid(p):
        rho, psi = p
        return signal.lfilter([1.0], [1.0, psi], y - rho * lag)

    res = optimize.least_squares(resid, [rho0, 0.0], bounds=([-0.99, -0.99], [0.99, 0.99]))
    ssr_arma = 2.0 * float(res.cost)
    if ssr_ar <= 0 or n * math.log(ssr_arma / ssr_ar) + math.log(n) >= 0:
        return rho0, 0.0
    return float(res.x[0]), float(res.x[1])


def andrews_bandwidth(series, kernel: KernelName = KernelName.PARZEN) -> float:
    """Andrews plug-in bandwidth from an ARMA(1,1) fit to the demeaned series.

    ``alpha(2) = 4 (1 + rho psi)^2 (rho + psi)^2 / ((1 - rho)^4 (1 + psi)^4)``
    and ``S_T = 2.6614 (alpha(2) T)^{1/5}`` (Parzen) or
    ``1.1447 (alpha(1) T)^{1/3}`` (Bartlett), clipped to ``[1, floor(T^0.45)]``.
    """
    x = _values(series)
    x = x - x.mean()
    t = x.size
    rho, psi = _arma11_css(x)
    cap = max(1.0, math.floor(t**0.45))
    if KernelName(kernel) is KernelName.PARZEN:
        a2 = 4 * (1 + rho * psi) ** 2 * (rho + psi) ** 2 / ((1 - rho) ** 4 * (1 + psi) ** 4)
        s = 2.6614 * (a2 * t) ** 0.2
    else:
        a1 = 4 * (1 + rho * psi) ** 2 * (rho + psi) ** 2 / ((1 - rho) ** 2 * (1 + rho) ** 2 * (1 + psi) ** 4)
        s = 1.1447 * (a1 * t) ** (1 / 3)
    return float(min(max(s, 1.0), cap))


def hac_covariance(residuals: np.ndarray, hac: HacConfig = HacConfig(), bandwidth: float | None = None) -> np.ndarray:
    """``Gamma(0) + sum_l w(l/S) (Gamma(l) + Gamma(l)')`` with ``Gamma(l) = T^-1 sum u_t u_{t+l}'``.

    ``bandwidth`` overrides the configured rule (used by ``fit_gmm`` which
    chooses S once from the proxy series).
    """
    u = np.asarray(residuals, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    t = u.shape[0]
    if t < 2:
        raise ValueError("need at least two residual rows")
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite moment residuals")
    if not np.any(u):
        raise NumericalError("all moment residuals are zero; HAC matrix is singular")
    if bandwidth is None:
        bandwidth = hac.bandwidth if hac.bandwidth != "andrews" else andrews_bandwidth(u[:, 0], hac.kernel)
    s = float(bandwidth)
    kern = parzen if hac.kernel is KernelName.PARZEN else bartlett
    sigma = u.T @ u / t
    for ell in range(1, min(t - 1, int(math.floor(s))) + 1):
        w = float(kern(ell / s))
        if w == 0:
            continue
        g = u[ell:].T @ u[:-ell] / t
        sigma += w * (g + g.T)
    return 0.5 * (sigma + sigma.T)


def _inverse_spd(a: np.ndarray) -> np.ndarray:
    a = a + RIDGE * np.trace(a) * np.eye(a.shape[0])
    try:
        c = linalg.cho_factor(a)
    except linalg.LinAlgError as exc:
        raise NumericalError("weight matrix is not positive definite") from exc
    inv = linalg.cho_solve(c, np.eye(a.shape[0]))
    return 0.5 * (inv + inv.T)


def _collinear_pair(a: np.ndarray) -> str:
    w, v = np.linalg.eigh(a)
    idx = np.argsort(-np.abs(v[:, 0]))[:2]
    return f"{PARAM_NAMES[idx[0]]}/{PARAM_NAMES[idx[1]]}"


def standard_errors(theta, W: np.ndarray, sigma: np.ndarray, jac: np.ndarray, n_obs: int, efficient: bool):
    """Asymptotic covariance of the estimator divided by T.

    Efficient: ``(J' S^-1 J)^-1 / T``.  Otherwise the sandwich
    ``(J'WJ)^-1 J'W S W J (J'WJ)^-1 / T``.

    Returns
    -------
    se, vcov, condition number of the parameter-scaled ``J'WJ``
    """
    th = np.asarray(theta.as_array() if isinstance(theta, FsvParams) else theta, dtype=float)
    weight = _inverse_spd(sigma) if efficient else W
    bread = jac.T @ weight @ jac
    scale = np.diag(th)
    cond = float(np.linalg.cond(scale @ bread @ scale))
    if not np.isfinite(cond) or cond > 1e15:
        raise NumericalError(f"J'WJ is singular (near-collinear parameters {_collinear_pair(scale @ bread @ scale)})")
    binv = linalg.inv(bread)
    if efficient:
        vcov = binv
    else:
        meat = jac.T @ W @ sigma @ W @ jac
        vcov = binv @ meat @ binv
    vcov = 0.5 * (vcov + vcov.T) / n_obs
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    return se, vcov, cond


def j_test(objective: float, n_obs: int, n_conditions: int, n_params: int = 4):
    dof = int(n_conditions) - int(n_params)
    if dof <= 0:
        raise ValueError("J-test needs more moment conditions than parameters")
    stat = float(n_obs * objective)
    return stat, dof, float(stats.chi2.sf(stat, dof))


def hurst_ci_log(h_hat: float, se_h: float, level: float = 0.90) -> tuple[float, float]:
    """``H exp(-+ z se / H)``: delta-method interval for ln H mapped back."""
    if not h_hat > 0:
        raise ValueError("h_hat must be positive")
    if se_h < 0:
        raise ValueError("se_h must be non-negative")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = stats.norm.ppf(0.5 + level / 2)
    r = float(z * se_h / h_hat)
    # exp(r) overflows only for absurd se/H; the upper bound is then unbounded
    hi = h_hat * math.exp(r) if r < 700 else math.inf
    return h_hat * math.exp(-r), hi


def minimize_gmm(sample, W, start, config: GmmConfig, rng=None):
    """Minimize ``(g - G_c(theta))' W (g - G_c(theta))`` from ``start``; returns (result, success)."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    start = np.asarray(start.as_array() if isinstance(start, FsvParams) else start, dtype=float)
    spec, bounds = config.spec, config.bounds
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    chol = linalg.cholesky(W + RIDGE * np.trace(W) * np.eye(W.shape[0]), lower=False)
    cache = {}

    def resid(th):
        key = th.tobytes()
        if key not in cache:
            cache.clear()
            g = model_moments(th, spec)
            cache[key] = g
        return chol @ (sample - cache[key])

    def jac(th):
        g = cache.get(th.tobytes())
        return -chol @ moment_jacobian(th, spec, bounds, base=g)

    best = None
    x0 = _clamp(start, bounds)
    for attempt in range(config.restarts + 1):
        x0 = np.clip(x0, lo, hi)
        res = optimize.least_squares(
            resid, x0, jac=jac, bounds=(lo, hi), method="trf", x_scale="jac",
            ftol=config.tol, xtol=config.tol, gtol=1e-12, max_nfev=config.max_nfev,
        )
        if best is None or res.cost < best.cost:
            best = res
        if res.success and res.status > 0:
            return res, True
        x0 = start * np.exp(rng.uniform(math.log(0.8), math.log(1.2), size=start.size))
    return best, False


def fit_gmm(series, config: GmmConfig = GmmConfig()) -> GmmFit:
    """Iterated GMM: identity weight first, then inverse HAC at the current estimate."""
    v = _values(series)
    spec = config.spec
    _check_length(v, spec)
    if np.ptp(v) == 0:
        raise DataError("series is constant")
    sample = sample_moment_vector(v, spec)
    contrib = moment_contributions(v, spec)
    n_obs = v.size
    init = config.init_overrides or initial_values(v, bounds=config.bounds)
    rng = np.random.default_rng(config.seed)
    bandwidth = (
        config.hac.bandwidth if config.hac.bandwidth != "andrews" else andrews_bandwidth(v, config.hac.kernel)
    )
    theta = init.as_array()
    W = np.eye(spec.size)
    obj_trace, theta_trace, notes = [], [], []
    converged = True
    sigma = None
    for it in range(config.max_iterations):
        if it > 0:
            sigma = hac_covariance(contrib - model_moments(theta, spec), config.hac, bandwidth)
            W = _inverse_spd(sigma)
        res, ok = minimize_gmm(sample, W, theta, config, rng)
        converged &= ok
        if not ok:
            notes.append(f"iteration {it + 1}: {res.message}")
        prev, theta = theta, res.x
        m = sample - model_moments(theta, spec)
        obj_trace.append(float(m @ W @ m))
        theta_trace.append([float(x) for x in theta])
        if it > 0 and np.max(np.abs(theta - prev) / np.maximum(np.abs(prev), 1e-12)) < config.tol:
            break
    efficient = sigma is not None
    if sigma is None:
        sigma = hac_covariance(contrib - model_moments(theta, spec), config.hac, bandwidth)
    jac = moment_jacobian(theta, spec, config.bounds)
    se, vcov, cond = standard_errors(theta, W, sigma, jac, n_obs, efficient)
    if cond > COND_WARN:
        msg = f"ill-conditioned J'WJ (scaled condition number {cond:.2e}); lambda and nu are weakly separately identified"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    if spec.size > 4:
        j_stat, j_dof, j_p = j_test(obj_trace[-1], n_obs, spec.size)
    else:
        j_stat, j_dof, j_p = float("nan"), 0, float("nan")
    return GmmFit(
        theta=FsvParams.from_array(theta),
        vcov=vcov,
        se=se,
        j_stat=j_stat,
        j_dof=j_dof,
        j_pvalue=j_p,
        objective_trace=obj_trace,
        weight_matrix=W,
        converged=bool(converged),
        n_obs=n_obs,
        initial=init,
        theta_trace=theta_trace,
        bandwidth=float(bandwidth),
        message="converged" if converged else "; ".join(notes),
        warnings=notes,
        config=config,
    )
