"""Path-space change of measure between two CTMCs on the same space.

Along a path of X under rate u^X, the log Radon-Nikodym derivative of the
law under u^Y is

    W(t) = int_0^t sum_{z != X(s)} [u^X_s(z, X(s)) - u^Y_s(z, X(s))] ds
           + sum_{jumps s <= t} log(u^Y_s(X(s), X(s-)) / u^X_s(X(s), X(s-)))

and the path KL divergence equals E^X[-W(t)], which also equals the time
integral of the expected Bregman divergence D_F(u^X || u^Y), F(x) = x log x.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._numerics import fsum, piecewise_simpson, simpson_rule
from .core import DenseDistribution, kl_divergence
from .ctmc import (RngStream, Trajectory, TrajectoryBatch, draw_initial, forward_integrate,
                   integrate_along, marginal_path, simulate_batch)
from .exceptions import AbsoluteContinuityError, DomainError
from .rates import Rate

EXP_LIMIT = 700.0
CHUNK = 50_000


def bregman(a: float, b: float) -> float:
    """D_F(a || b) = a log(a / b) - a + b with 0 log 0 = 0."""
    if not b > 0:
        raise DomainError(f"Bregman divergence needs b > 0, got {b}")
    if a < 0:
        raise DomainError(f"Bregman divergence needs a >= 0, got {a}")
    if a == 0:
        return float(b)
    return a * math.log(a / b) - a + b


def bregman_array(a, b) -> np.ndarray:
    """Elementwise D_F(a || b); +inf where b == 0 < a, and 0 where both vanish."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = b - a
    pos = a > 0
    with np.errstate(divide="ignore"):
        out[pos] += a[pos] * (np.log(a[pos]) - np.log(b[pos]))
    return out


def _union_breakpoints(*rates: Rate) -> tuple:
    return tuple(sorted({float(b) for r in rates for b in r.breakpoints}))


@dataclass
class RnAccumulator:
    """Running log weight along one trajectory.

    Drift pieces are kept and summed exactly; a jump onto a pair with
    u^Y = 0 < u^X trips the absolute-continuity flag and sends W to -inf.
    """

    log_weight: float = 0.0
    absolutely_continuous: bool = True
    bregman_integral: float = 0.0
    _drift: list = field(default_factory=list, repr=False)
    _jumps: float = 0.0

    def _update(self) -> None:
        self.log_weight = fsum(self._drift) + self._jumps

    def add_drift(self, value: float) -> None:
        self._drift.append(value)
        self._update()

    def add_jump(self, ux: float, uy: float) -> None:
        if ux > 0 and uy == 0:
            self.absolutely_continuous = False
            self._jumps = -math.inf
        elif ux > 0:
            self._jumps += math.log(uy / ux)
        self._update()

    def add_bregman(self, value: float) -> None:
        self.bregman_integral += value


def _check_hypothesis(rx: np.ndarray, ry: np.ndarray) -> None:
    if np.any((rx == 0) & (ry > 0)):
        raise AbsoluteContinuityError("u^X = 0 but u^Y > 0 on a visited Hamming-1 pair")


def rn_log_weight(traj: Trajectory, uX: Rate, uY: Rate, quad_steps: int = 17) -> float:
    """W(t_end) along one trajectory; Simpson drift per segment, exact jump terms."""
    if quad_steps < 16:
        raise DomainError("quad_steps must be >= 16 per inter-jump segment")
    sp = traj.space
    acc = RnAccumulator()
    starts = np.concatenate([[traj.t0], traj.times])
    ends = np.concatenate([traj.times, [traj.t_end]])
    states = np.concatenate([[traj.x0], traj.states])
    bps = _union_breakpoints(uX, uY)
    for a, b, x in zip(starts, ends, states):
        pieces = np.unique(np.concatenate([[a], [p for p in bps if a < p < b], [b]]))
        for lo, hi in zip(pieces[:-1], pieces[1:]):
            if hi <= lo:
                continue
            nodes, w = simpson_rule(lo, hi, quad_steps)
            rx, ry = uX.rates(nodes, x), uY.rates(nodes, x)
            _check_hypothesis(rx, ry)
            acc.add_drift(float(w @ (rx.sum(axis=(1, 2)) - ry.sum(axis=(1, 2)))))
            acc.add_bregman(float(w @ bregman_array(rx, ry).sum(axis=(1, 2))))
    prev = np.concatenate([[traj.x0], traj.states[:-1]])
    for t, x, z in zip(traj.times, prev, traj.states):
        d = int(np.argmax(sp.symbols[x] != sp.symbols[z]))
        s = int(sp.symbols[z, d])
        acc.add_jump(float(uX.rates(t, x)[0, d, s]), float(uY.rates(t, x)[0, d, s]))
    return acc.log_weight


def rn_log_weights(batch: TrajectoryBatch, uX: Rate, uY: Rate, quad_steps: int = 17) -> np.ndarray:
    """Vectorized W(t_end) for every chain in a batch; -inf where u^Y vanishes at a jump."""
    if quad_steps < 16:
        raise DomainError("quad_steps must be >= 16 per inter-jump segment")
    sp = batch.space

    def drift(t, x):
        rx, ry = uX.rates(t, x), uY.rates(t, x)
        _check_hypothesis(rx, ry)
        return rx.sum(axis=(1, 2)) - ry.sum(axis=(1, 2))

    w = integrate_along(batch, drift, quad_steps, breakpoints=_union_breakpoints(uX, uY))
    if len(batch.chain):
        diff = sp.symbols[batch.prev] != sp.symbols[batch.states]
        d = np.argmax(diff, axis=1)
        s = sp.symbols[batch.states, d]
        rows = np.arange(len(d))
        ux = uX.rates(batch.times, batch.prev)[rows, d, s]
        uy = uY.rates(batch.times, batch.prev)[rows, d, s]
        with np.errstate(divide="ignore"):
            logs = np.log(uy) - np.log(ux)
        bad = uy == 0
        jump_sum = np.bincount(batch.chain[~bad], weights=logs[~bad], minlength=len(batch))
        w = w + jump_sum
        w[np.unique(batch.chain[bad])] = -np.inf
    return w


class MCEstimate(NamedTuple):
    estimate: float
    std_err: float
    n: int
    overflow: int = 0

    def to_json(self) -> dict:
        return {"estimate": self.estimate, "std_err": self.std_err, "n": self.n}


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    mean = fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _weights_under_x(uX: Rate, uY: Rate, p0: DenseDistribution, t_end: float, n_traj: int,
                     rng: RngStream, quad_steps: int, n_jobs: int = 1, t0: float = 0.0) -> np.ndarray:
    """W for ``n_traj`` chains simulated under u^X, in fixed-size chunks with their own substreams."""
    if p0.space != uX.space or uX.space != uY.space:
        raise DomainError("rates and p0 must share a state space")
    sizes = [min(CHUNK, n_traj - lo) for lo in range(0, n_traj, CHUNK)]

    def run(i):
        gen = rng.substream(i)
        x0 = draw_initial(p0, sizes[i], gen)
        batch = simulate_batch(uX, x0, t0, t_end, gen)
        return rn_log_weights(batch, uX, uY, quad_steps)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    return np.concatenate(parts)


def path_kl_mc(uX: Rate, uY: Rate, p0: DenseDistribution, t_end: float, n_traj: int,
               rng: RngStream, quad_steps: int = 17, n_jobs: int = 1) -> MCEstimate:
    """Monte Carlo E^X[-W(t_end)] with its standard error."""
    w = _weights_under_x(uX, uY, p0, t_end, n_traj, rng, quad_steps, n_jobs)
    if np.any(np.isinf(w)):
        raise AbsoluteContinuityError("a simulated jump has u^Y = 0 < u^X; path KL is infinite")
    est, se = _mean_se(-w)
    return MCEstimate(est, se, n_traj)


def martingale_check(uX: Rate, uY: Rate, p0: DenseDistribution, t_end: float, n_traj: int,
                     rng: RngStream, quad_steps: int = 17, n_jobs: int = 1) -> MCEstimate:
    """Mean of exp(W(t_end)) under u^X; should be 1 within a few standard errors.

    Weights with W > 700 are capped at exp(700) and counted in ``overflow``.
    """
    w = _weights_under_x(uX, uY, p0, t_end, n_traj, rng, quad_steps, n_jobs)
    over = int(np.sum(w > EXP_LIMIT))
    est, se = _mean_se(np.exp(np.minimum(w, EXP_LIMIT)))
    return MCEstimate(est, se, n_traj, over)


def path_kl_exact(uX: Rate, uY: Rate, p0: DenseDistribution, t_end: float,
                  quad_steps: int = 257, t0: float = 0.0, steps: int = 2048) -> float:
    """Simpson quadrature of E_{p^X_t} sum_z D_F(u^X_t || u^Y_t) over [t0, t_end]."""
    if uX.space != uY.space or p0.space != uX.space:
        raise DomainError("rates and p0 must share a state space")
    sp = uX.space
    nodes, weights = piecewise_simpson(t0, t_end, quad_steps, _union_breakpoints(uX, uY))
    probs = marginal_path(uX, p0, nodes, steps)
    states = np.arange(sp.n_states)
    vals = np.empty(len(nodes))
    for i, t in enumerate(nodes):
        rx = uX.rates(np.full(sp.n_states, t), states)
        ry = uY.rates(np.full(sp.n_states, t), states)
        terms = bregman_array(rx, ry).sum(axis=(1, 2))
        reach = probs[i] > 0
        if np.any(np.isinf(terms[reach])):
            raise AbsoluteContinuityError(
                f"Bregman term is infinite at t={t:.6g}: u^Y = 0 where u^X > 0"
            )
        vals[i] = fsum(probs[i][reach] * terms[reach])
    return max(0.0, fsum(weights * vals))


class DataProcessing(NamedTuple):
    marginal_kl: float
    path_kl: float

    @property
    def holds(self) -> bool:
        return self.marginal_kl <= self.path_kl + 1e-8


def data_processing_check(uX: Rate, uY: Rate, p0: DenseDistribution, t_end: float,
                          steps: int = 2048, quad_steps: int = 257) -> DataProcessing:
    """KL between the two time-``t_end`` marginals next to the path KL that bounds it."""
    px = forward_integrate(uX, p0, 0.0, t_end, steps)
    py = forward_integrate(uY, p0, 0.0, t_end, steps)
    return DataProcessing(kl_divergence(px, py), path_kl_exact(uX, uY, p0, t_end, quad_steps, steps=steps))
