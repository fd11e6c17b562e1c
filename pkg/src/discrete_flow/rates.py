"""Factorized transition rates supported on Hamming-distance-1 pairs.

A rate is represented through one vectorized primitive, ``rates(t, x)``:
for times ``t`` and flat state indices ``x`` (broadcast to a common shape
``(m,)``) it returns an ``(m, dim, vocab_size)`` array whose entry
``[i, d, z]`` is the rate of jumping from ``x[i]`` to the state with
coordinate ``d`` replaced by the 0-based symbol ``z``. Entries with
``z == x^d`` are zero; the diagonal u_t(x, x) is minus the row total.
"""

from __future__ import annotations

import numpy as np

from .core import State, StateSpace
from .exceptions import DomainError


class Rate:
    """Base class for factorized rates.

    Subclasses implement ``_rates(t, x)`` on validated 1-d arrays.
    ``breakpoints`` lists times where the rate may be discontinuous;
    integrators restart there.
    """

    space: StateSpace
    breakpoints: tuple = ()

    def _rates(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rates(self, t, x) -> np.ndarray:
        t_arr, x_arr = np.broadcast_arrays(np.atleast_1d(np.asarray(t, dtype=float)),
                                           np.atleast_1d(np.asarray(x, dtype=np.int64)))
        t_arr = np.ascontiguousarray(t_arr)
        x_arr = np.ascontiguousarray(x_arr)
        if t_arr.ndim != 1:
            raise DomainError("rates() takes 1-d time and state arrays")
        out = self._rates(t_arr, x_arr)
        out[self.space.self_mask[x_arr]] = 0.0
        return out

    def outflow(self, t, x) -> np.ndarray:
        """Total jump intensity sum_{z != x} u_t(z, x)."""
        return self.rates(t, x).sum(axis=(1, 2))

    def table(self, t: float) -> np.ndarray:
        """Rates out of every state at time ``t``: shape (n_states, dim, vocab_size)."""
        return self.rates(np.full(self.space.n_states, float(t)), np.arange(self.space.n_states))

    def __call__(self, t: float, x: State, d: int, z_d: int) -> float:
        """Off-diagonal rate u_t(z, x) where z is x with coordinate d set to 1-based ``z_d``."""
        if x.space != self.space:
            raise DomainError("state from a different space")
        if z_d == x.coords[d]:
            raise DomainError("z_d must differ from x^d; use diagonal() for u_t(x, x)")
        return float(self.rates(t, x.index)[0, d, z_d - 1])

    def diagonal(self, t: float, x: State) -> float:
        return -float(self.outflow(t, x.index)[0])

    def generator(self, t: float) -> np.ndarray:
        """Dense matrix G with G[z, x] = u_t(z, x); columns sum to zero."""
        sp = self.space
        tab = self.table(t)
        g = np.zeros((sp.n_states, sp.n_states))
        src = np.broadcast_to(np.arange(sp.n_states)[:, None, None], tab.shape)
        np.add.at(g, (sp.neighbors.ravel(), src.ravel()), tab.ravel())
        g[np.diag_indices(sp.n_states)] = 0.0
        g[np.diag_indices(sp.n_states)] = -g.sum(axis=0)
        return g


class PolynomialRate(Rate):
    """u_t = sum_k coeffs[k] * t**k with nonnegative coefficient tables.

    ``coeffs`` has shape (K, n_states, dim, vocab_size).
    """

    def __init__(self, space: StateSpace, coeffs):
        c = np.array(coeffs, dtype=float)
        if c.ndim == 3:
            c = c[None]
        if c.shape[1:] != (space.n_states, space.dim, space.vocab_size):
            raise DomainError(f"coefficient tables have shape {c.shape[1:]}")
        if np.any(c < 0):
            raise DomainError("rate coefficients must be nonnegative")
        c[:, space.self_mask] = 0.0
        self.space = space
        self.coeffs = c

    def _rates(self, t, x):
        out = np.zeros((len(t), self.space.dim, self.space.vocab_size))
        power = np.ones_like(t)
        for ck in self.coeffs:
            out += power[:, None, None] * ck[x]
            power = power * t
        return out

    @classmethod
    def random(cls, space: StateSpace, rng: np.random.Generator, degree: int = 1,
               scale: float = 1.0, sparsity: float = 0.0) -> PolynomialRate:
        """Random nonnegative rate; ``sparsity`` zeroes that fraction of entries."""
        shape = (degree + 1, space.n_states, space.dim, space.vocab_size)
        c = scale * rng.uniform(0.2, 1.0, size=shape) / (degree + 1)
        if sparsity > 0:
            c *= (rng.uniform(size=shape[1:]) >= sparsity)[None]
        return cls(space, c)


class ConstantRate(PolynomialRate):
    """Time-homogeneous rate table of shape (n_states, dim, vocab_size)."""

    def __init__(self, space: StateSpace, table):
        super().__init__(space, np.asarray(table, dtype=float)[None])

    @classmethod
    def uniform(cls, space: StateSpace, per_pair: float) -> ConstantRate:
        """Every Hamming-1 neighbor at the same rate ``per_pair``."""
        return cls(space, np.full((space.n_states, space.dim, space.vocab_size), float(per_pair)))


class ZeroRate(Rate):
    def __init__(self, space: StateSpace):
        self.space = space

    def _rates(self, t, x):
        return np.zeros((len(t), self.space.dim, self.space.vocab_size))
