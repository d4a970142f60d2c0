"""Fixed-node Gauss-Legendre rules on geometrically graded meshes.

The rough kernels have ``kappa(0) - kappa(y) ~ y^{2H}``, so ``exp(kappa)`` is
bounded but not smooth at the origin.  Panels that shrink geometrically
towards the singular endpoint restore exponential convergence for any
``H``, and fixed nodes keep the moment functions smooth in the parameters,
which the finite-difference Jacobian relies on.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

GRADE_RATIO = 0.2
GRADE_LEVELS = 26
PANEL_ORDER = 12
SMOOTH_ORDER = 40


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _map(x, w, a, b):
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def smooth_rule(a: float, b: float, order: int = SMOOTH_ORDER):
    x, w = gauss_legendre(order)
    return _map(x, w, a, b)


@lru_cache(maxsize=64)
def _graded_unit(ratio: float, levels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    # panels [r^{k+1}, r^k] for k < levels plus [0, r^levels]
    x, w = gauss_legendre(order)
    edges = ratio ** np.arange(levels + 1)
    nodes, weights = [], []
    for hi, lo in zip(edges[:-1], edges[1:]):
        n, wt = _map(x, w, lo, hi)
        nodes.append(n)
        weights.append(wt)
    n, wt = _map(x, w, 0.0, edges[-1])
    nodes.append(n)
    weights.append(wt)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    order_idx = np.argsort(nodes)
    nodes, weights = nodes[order_idx], weights[order_idx]
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def graded_rule(
    a: float,
    b: float,
    singular: str = "left",
    ratio: float = GRADE_RATIO,
    levels: int = GRADE_LEVELS,
    order: int = PANEL_ORDER,
):
    """Nodes and weights on ``[a, b]`` graded towards one or both ends.

    ``singular`` is ``"left"``, ``"right"`` or ``"both"``.
    """
    u, w = _graded_unit(ratio, levels, order)
    length = b - a
    if singular == "left":
        return a + length * u, length * w
    if singular == "right":
        return b - length * u[::-1], length * w[::-1]
    if singular == "both":
        mid = 0.5 * (a + b)
        xl, wl = graded_rule(a, mid, "left", ratio, levels, order)
        xr, wr = graded_rule(mid, b, "right", ratio, levels, order)
        return np.concatenate([xl, xr]), np.concatenate([wl, wr])
    raise ValueError(f"unknown singular end {singular!r}")
