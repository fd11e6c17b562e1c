"""Quadrature and summation helpers."""

from __future__ import annotations

import math

import numpy as np


INSET = 1e-12


def inset(x: np.ndarray, a: float, b: float) -> np.ndarray:
    """Pull the end nodes of [a, b] inward so piecewise rates are read from inside the piece."""
    x = x.copy()
    eps = INSET * (b - a)
    x[x <= a + eps] = a + eps
    x[x >= b - eps] = b - eps
    return x


def simpson_rule(a: float, b: float, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of composite Simpson on [a, b]; ``n_nodes`` is bumped to odd.

    End nodes sit a relative 1e-12 inside [a, b] (see ``inset``).
    """
    n = max(3, int(n_nodes))
    if n % 2 == 0:
        n += 1
    x = inset(np.linspace(a, b, n), a, b)
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (b - a) / (3.0 * (n - 1))


def split_points(a: float, b: float, breakpoints) -> np.ndarray:
    """[a, b] with any interior breakpoints inserted, sorted."""
    bp = np.asarray(breakpoints if breakpoints is not None else [], dtype=float)
    inner = bp[(bp > a) & (bp < b)]
    return np.unique(np.concatenate([[a], inner, [b]]))


def piecewise_simpson(a: float, b: float, n_nodes: int, breakpoints=None):
    """Composite Simpson over [a, b], restarted on every piece between breakpoints.

    ``n_nodes`` is the total budget; each piece gets an odd share of at least 3.
    Returns concatenated nodes and weights (nodes at shared edges are repeated).
    """
    edges = split_points(a, b, breakpoints)
    pieces = len(edges) - 1
    per = max(3, (int(n_nodes) - 1) // pieces + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = simpson_rule(lo, hi, per)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def fsum(values) -> float:
    """Exactly rounded float sum; order independent."""
    return math.fsum(np.asarray(values, dtype=float).ravel())
