"""Exact fGn sampling, discretised fOU log-variance and daily IV / RV / BV.

Randomness for one path comes from a ``numpy.random.SeedSequence``: its
first child drives the fGn and the initial state, its second child the
price normals, so the two are independent and each is reproducible from
``seed`` alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .data_io import VolSeries
from .measurement import MU1_SQ_INV
from .model_core import FsvParams, kappa_zero

__all__ = [
    "SimConfig",
    "SimOutput",
    "fgn_autocov",
    "fgn_increments",
    "fou_path",
    "simulate_fsv",
    "spot_variance",
    "path_streams",
]

# eigenvalues of the circulant embedding above -EIG_DUST * max are rounding noise
EIG_DUST = 1e-12
PRICE_CHUNK_DAYS = 128


def fgn_autocov(hurst: float, lags, dt: float = 1.0) -> np.ndarray:
    """``dt^{2H}/2 (|k+1|^{2H} + |k-1|^{2H} - 2|k|^{2H})``."""
    k = np.abs(np.asarray(lags, dtype=float))
    p = 2.0 * hurst
    return 0.5 * dt**p * (np.abs(k + 1) ** p + np.abs(k - 1) ** p - 2.0 * k**p)


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def path_streams(seed, spawn_key: tuple[int, ...] = ()) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (volatility, price) generators for one path.

    ``spawn_key`` selects a replication substream, so replication ``r`` of a
    batch seeded with ``s`` is reproducible on its own as ``(s, (r,))``.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed, spawn_key=tuple(spawn_key))
    vol, price = ss.spawn(2)
    return np.random.default_rng(vol), np.random.default_rng(price)


def _embedding_size(n: int) -> int:
    m = sfft.next_fast_len(2 * n)
    while m % 2:
        m = sfft.next_fast_len(m + 1)
    return m


def fgn_increments(hurst: float, count: int, dt: float = 1.0, seed=None) -> np.ndarray:
    """Exact fractional Gaussian noise by circulant embedding.

    Parameters
    ----------
    hurst : float
        Hurst exponent in (0, 1).
    count : int
        Number of increments.
    dt : float
        Grid spacing; the increments have variance ``dt**(2H)``.
    seed : int, SeedSequence or Generator

    Returns
    -------
    ndarray of shape (count,)
    """
    if not 0 < hurst < 1:
        raise ValueError("hurst must lie in (0, 1)")
    count = int(count)
    if count < 1:
        raise ValueError("count must be positive")
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = _generator(seed)
    m = _embedding_size(count)
    half = m // 2
    row = fgn_autocov(hurst, np.arange(half + 1))
    row = np.concatenate([row, row[-2:0:-1]])
    eig = sfft.fft(row).real
    del row
    lo = eig.min()
    if lo < -EIG_DUST * eig.max():
        raise ArithmeticError(f"circulant embedding has a negative eigenvalue {lo:.3e}")
    np.maximum(eig, 0.0, out=eig)
    np.sqrt(eig / m, out=eig)
    z = rng.standard_normal(2 * m).view(np.complex128)
    z *= eig
    del eig
    out = sfft.fft(z, overwrite_x=True)[:count].real.copy()
    if dt != 1.0:
        out *= dt**hurst
    return out


def spot_variance(params: FsvParams, y):
    """``xi * exp(y - kappa(0)/2)`` for the zero-mean log-variance ``y``."""
    return params.xi * np.exp(np.asarray(y, dtype=float) - 0.5 * kappa_zero(params))


def fou_path(params: FsvParams, days: int, steps_per_day: int, seed=None) -> np.ndarray:
    """Discretised fOU log variance on ``days * steps_per_day + 1`` points.

    ``Y_t = eta + (Y_{t-D} - eta) e^{-lam D} + nu e^{-lam D/2} (B_t - B_{t-D})``
    with ``eta = ln xi - kappa(0)/2`` and ``Y_0 ~ N(eta, kappa(0))``, so that
    ``exp(Y)`` is the spot variance.
    """
    if days < 1 or steps_per_day < 1:
        raise ValueError("days and steps_per_day must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else path_streams(seed)[0]
    delta = 1.0 / steps_per_day
    k0 = kappa_zero(params)
    eta = math.log(params.xi) - 0.5 * k0
    z0 = math.sqrt(k0) * rng.standard_normal()
    count = days * steps_per_day
    shocks = fgn_increments(params.hurst, count, delta, rng)
    shocks *= params.nu * math.exp(-0.5 * params.lam * delta)
    phi = math.exp(-params.lam * delta)
    centred, _ = signal.lfilter([1.0], [1.0, -phi], shocks, zi=[phi * z0])
    del shocks
    out = np.empty(count + 1)
    out[0] = z0
    out[1:] = centred
    out += eta
    return out


@dataclass(frozen=True)
class SimConfig:
    params: FsvParams
    days: int
    steps_per_day: int = 23400
    intraday_n: int = 78
    seed: int = 0
    emit_price: bool = False
    drift: float = 0.0
    spawn_key: tuple[int, ...] = ()

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be positive")
        if self.steps_per_day < 1 or self.intraday_n < 2:
            raise ValueError("steps_per_day must be positive and intraday_n at least 2")
        if self.steps_per_day % self.intraday_n:
            raise ValueError("intraday_n must divide steps_per_day")

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "days": self.days,
            "steps_per_day": self.steps_per_day,
            "intraday_n": self.intraday_n,
            "seed": self.seed,
            "emit_price": self.emit_price,
            "drift": self.drift,
            "spawn_key": list(self.spawn_key),
        }


@dataclass(frozen=True)
class SimOutput:
    iv: VolSeries
    rv: VolSeries
    bv: VolSeries
    price: np.ndarray | None = None
    # spot variance at the start of each intraday interval, shape (days, n)
    spot_grid: np.ndarray | None = None


def simulate_fsv(config: SimConfig) -> SimOutput:
    """Simulate one path and aggregate it to daily IV, RV and BV.

    IV is the left-point Riemann sum of spot variance over the day; the log
    price follows the Euler scheme ``dX = drift dt + sigma sqrt(D) Z`` with
    ``Z`` independent of the volatility noise.
    """
    vol_rng, price_rng = path_streams(config.seed, config.spawn_key)
    n_steps, n = config.steps_per_day, config.intraday_n
    delta = 1.0 / n_steps
    y = fou_path(config.params, config.days, n_steps, vol_rng)
    sigma2 = np.exp(y[:-1]).reshape(config.days, n_steps)
    del y
    iv = sigma2.sum(axis=1) * delta
    spot_grid = sigma2[:, :: n_steps // n].copy()
    rv = np.empty(config.days)
    bv = np.empty(config.days)
    price = np.empty(config.days * n_steps + 1) if config.emit_price else None
    level = 0.0
    for start in range(0, config.days, PRICE_CHUNK_DAYS):
        stop = min(start + PRICE_CHUNK_DAYS, config.days)
        z = price_rng.standard_normal((stop - start, n_steps))
        r = np.sqrt(sigma2[start:stop] * delta) * z
        if config.drift:
            r += config.drift * delta
        coarse = r.reshape(stop - start, n, n_steps // n).sum(axis=2)
        rv[start:stop] = np.einsum("ij,ij->i", coarse, coarse)
        a = np.abs(coarse)
        bv[start:stop] = MU1_SQ_INV * np.einsum("ij,ij->i", a[:, 1:], a[:, :-1])
        if price is not None:
            flat = np.cumsum(r.ravel()) + level
            price[start * n_steps + 1 : stop * n_steps + 1] = flat
            level = flat[-1]
    if price is not None:
        price[0] = 0.0
    return SimOutput(
        iv=VolSeries(iv, label="iv"),
        rv=VolSeries(rv, n_intraday=n, label="rv"),
        bv=VolSeries(bv, n_intraday=n, label="bv"),
        price=price,
        spot_grid=spot_grid,
    )
