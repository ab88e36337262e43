"""Gauss-Legendre quadrature helpers (adaptive and composite)."""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import QuadratureFailure


@lru_cache(maxsize=None)
def gl_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _panel(f, a, b, x, w):
    half = 0.5 * (b - a)
    s = 0.5 * (a + b) + half * x
    vals = np.asarray(f(s))
    # vals: (nodes, ...) -> contract the node axis
    return half * np.tensordot(w, vals, axes=(0, 0))


def adaptive_gl(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    rtol: float = 1e-10,
    atol: float = 0.0,
    order: int = 15,
    max_panels: int = 20000,
    breakpoints: int = 0,
) -> np.ndarray:
    """Integrate ``f`` over [a, b] by bisection with a Gauss-Legendre rule.

    ``f`` receives a 1-d array of nodes and returns an array whose first axis
    runs over nodes; the result has the remaining shape.  A panel is accepted
    when the one-panel and two-half-panel estimates agree componentwise to
    ``rtol * |estimate| + atol`` (the absolute part is apportioned by panel
    length).  ``breakpoints`` pre-splits [a, b] geometrically towards ``a``,
    which helps integrands concentrated near the left endpoint.
    """
    if b == a:
        return np.zeros_like(np.asarray(f(np.array([a]))))[0]
    x, w = gl_rule(order)
    length = b - a
    edges = [a]
    if breakpoints > 0:
        edges += [a + length * 2.0 ** (-k) for k in range(breakpoints, 0, -1)]
    edges.append(b)
    stack = [(edges[i], edges[i + 1], _panel(f, edges[i], edges[i + 1], x, w))
             for i in range(len(edges) - 1)]
    total = None
    panels = 0
    while stack:
        lo, hi, whole = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _panel(f, lo, mid, x, w)
        right = _panel(f, mid, hi, x, w)
        refined = left + right
        panels += 1
        allowed = rtol * np.abs(refined) + atol * (hi - lo) / length
        if np.all(np.abs(refined - whole) <= allowed) or hi - lo <= 1e-14 * max(1.0, abs(hi)):
            total = refined if total is None else total + refined
            continue
        if panels > max_panels:
            raise QuadratureFailure(
                f"adaptive Gauss-Legendre exceeded {max_panels} panels on [{a}, {b}]"
            )
        stack.append((lo, mid, left))
        stack.append((mid, hi, right))
    return total


def composite_gl(a: float, b: float, panels: np.ndarray | int, order: int = 20):
    """Nodes and weights of a composite rule.

    ``panels`` is either a panel count (uniform) or an explicit sorted array of
    panel edges covering [a, b].
    """
    x, w = gl_rule(order)
    if np.isscalar(panels):
        edges = np.linspace(a, b, int(panels) + 1)
    else:
        edges = np.asarray(panels, dtype=float)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (lo + hi) + half * x).ravel()
    weights = (half * w).ravel()
    return nodes, weights


def graded_edges(t: float, levels: int = 30, sub: int = 1) -> np.ndarray:
    """Panel edges on [0, t], geometrically graded towards 0.

    Each dyadic shell [t 2^-(k+1), t 2^-k] is split into ``sub`` equal panels.
    """
    shells = t * 2.0 ** (-np.arange(levels, -1, -1, dtype=float))
    edges = [0.0]
    for lo, hi in zip(shells[:-1], shells[1:]):
        edges.extend(np.linspace(lo, hi, sub + 1)[1:])
    edges.insert(1, shells[0])
    return np.unique(np.asarray(edges))
