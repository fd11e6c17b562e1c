"""Forward-equation integration and exact jump-process simulation.

Simulation is batched: many independent chains are advanced together
through a time partition with per-interval dominating rates. Inside an
interval of length Delta with bound lam, a chain receives
Poisson(lam * Delta) candidate times, sorted, and at each candidate it
jumps to neighbor z with probability u(z, x) / lam and otherwise stays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ._numerics import inset, simpson_rule, split_points
from .core import DenseDistribution, State, StateSpace
from .exceptions import DomainError, NormalizationError, RateBoundError
from .rates import Rate

DRIFT_TOL = 1e-9
NEG_TOL = -1e-12
HEADROOM = 1.05
SUBGRID = 64
DEFAULT_STEPS = 2048


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by (seed, stream id)."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v < 2**64:
                raise DomainError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, i: int) -> np.random.Generator:
        """Generator for chunk ``i``; independent of how chunks are scheduled."""
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream), int(i)))
        return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# Forward equation


def kolmogorov_rhs(rate: Rate, t: float, p: np.ndarray) -> np.ndarray:
    """dp/dt = incoming flux - outgoing flux under ``rate`` at time ``t``."""
    sp = rate.space
    flux = rate.table(t) * p[:, None, None]
    inflow = np.bincount(sp.neighbors.ravel(), weights=flux.ravel(), minlength=sp.n_states)
    return inflow - flux.sum(axis=(1, 2))


def _rk4(rate: Rate, p: np.ndarray, a: float, b: float, steps: int) -> np.ndarray:
    h = (b - a) / steps
    lo, hi = inset(np.array([a, b]), a, b)
    for i in range(steps):
        t = a + i * h
        t0, tm, t1 = max(t, lo), t + 0.5 * h, min(t + h, hi)
        k1 = kolmogorov_rhs(rate, t0, p)
        k2 = kolmogorov_rhs(rate, tm, p + 0.5 * h * k1)
        k3 = kolmogorov_rhs(rate, tm, p + 0.5 * h * k2)
        k4 = kolmogorov_rhs(rate, t1, p + h * k3)
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return p


def _integrate_raw(rate: Rate, p: np.ndarray, t0: float, t1: float, steps: int) -> np.ndarray:
    edges = split_points(t0, t1, rate.breakpoints)
    total = t1 - t0
    for a, b in zip(edges[:-1], edges[1:]):
        n = max(1, int(round(steps * (b - a) / total)))
        p = _rk4(rate, p, a, b, n)
    return p


def _finish(space: StateSpace, p: np.ndarray) -> DenseDistribution:
    drift = abs(p.sum() - 1.0)
    if drift > DRIFT_TOL:
        raise NormalizationError(f"forward integration drifted by {drift:.3e} from unit mass")
    if p.min() < NEG_TOL:
        raise NormalizationError(f"forward integration produced negative mass {p.min():.3e}")
    return DenseDistribution.renormalize(space, np.clip(p, 0.0, None))


def forward_integrate(rate: Rate, p0: DenseDistribution, t0: float, t1: float,
                      steps: int = DEFAULT_STEPS) -> DenseDistribution:
    """Fixed-step RK4 solution of the Kolmogorov forward equation from t0 to t1.

    Steps restart at the rate's breakpoints so piecewise-constant models are
    integrated without crossing a discontinuity.
    """
    if p0.space != rate.space:
        raise DomainError("p0 and rate live on different spaces")
    if steps < 1:
        raise DomainError("steps must be >= 1")
    if t1 < t0:
        raise DomainError("t1 must not precede t0")
    if t1 == t0:
        return p0
    return _finish(rate.space, _integrate_raw(rate, p0.mass.copy(), float(t0), float(t1), steps))


def marginal_path(rate: Rate, p0: DenseDistribution, times, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """Marginals at each of the nondecreasing ``times`` (first entry is p0's time).

    Returns an array of shape (len(times), n_states).
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise DomainError("times must be nondecreasing")
    span = times[-1] - times[0]
    out = np.empty((len(times), rate.space.n_states))
    p = p0.mass.copy()
    out[0] = p
    for i in range(1, len(times)):
        a, b = times[i - 1], times[i]
        if b > a:
            p = _integrate_raw(rate, p, a, b, max(1, int(np.ceil(steps * (b - a) / span))))
        out[i] = p
    if np.max(np.abs(out.sum(axis=1) - 1.0)) > DRIFT_TOL or out.min() < NEG_TOL:
        raise NormalizationError("marginal path left the probability simplex")
    return np.clip(out, 0.0, None)


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One sample path: start state, jump events and the observation horizon."""

    space: StateSpace
    t0: float
    x0: int
    times: np.ndarray
    states: np.ndarray
    t_end: float
    seed: int | None = None
    stream: int | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=np.int64)
        if times.shape != states.shape:
            raise DomainError("event times and states differ in length")
        if len(times):
            if np.any(np.diff(times) <= 0) or times[0] <= self.t0 or times[-1] > self.t_end:
                raise DomainError("event times must be strictly increasing within (t0, t_end]")
            prev = np.concatenate([[self.x0], states[:-1]])
            if np.any(prev == states):
                raise DomainError("consecutive states must differ")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def events(self) -> list[tuple[float, State]]:
        return [(float(t), self.space.state_at(s)) for t, s in zip(self.times, self.states)]

    @property
    def initial_state(self) -> State:
        return self.space.state_at(self.x0)

    @property
    def final_state(self) -> int:
        return int(self.states[-1]) if len(self.states) else int(self.x0)

    def state_at(self, t: float) -> int:
        """Flat index of X(t) (right-continuous)."""
        k = np.searchsorted(self.times, t, side="right")
        return int(self.x0) if k == 0 else int(self.states[k - 1])

    def to_jsonl(self) -> str:
        sp = self.space
        header = {"seed": self.seed, "stream": self.stream, "t0": self.t0, "t_end": self.t_end,
                  "x0": list(sp.decode(self.x0)), "vocab_size": sp.vocab_size, "dim": sp.dim}
        lines = [json.dumps(header)]
        lines += [json.dumps({"t": float(t), "state": list(sp.decode(s))})
                  for t, s in zip(self.times, self.states)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> Trajectory:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        h = rows[0]
        sp = StateSpace(int(h["vocab_size"]), int(h["dim"]))
        return cls(sp, float(h["t0"]), sp.encode(h["x0"]),
                   np.array([r["t"] for r in rows[1:]], dtype=float),
                   np.array([sp.encode(r["state"]) for r in rows[1:]], dtype=np.int64),
                   float(h["t_end"]), h.get("seed"), h.get("stream"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Many independent paths stored as flat event arrays sorted by (chain, time)."""

    space: StateSpace
    t0: float
    t_end: float
    x0: np.ndarray
    chain: np.ndarray
    times: np.ndarray
    prev: np.ndarray
    states: np.ndarray

    def __len__(self) -> int:
        return len(self.x0)

    @property
    def n_jumps(self) -> np.ndarray:
        return np.bincount(self.chain, minlength=len(self))

    @property
    def final_states(self) -> np.ndarray:
        out = self.x0.copy()
        last = np.ones(len(self.chain), dtype=bool)
        last[:-1] = self.chain[1:] != self.chain[:-1]
        out[self.chain[last]] = self.states[last]
        return out

    def trajectory(self, i: int) -> Trajectory:
        sel = self.chain == i
        return Trajectory(self.space, self.t0, int(self.x0[i]), self.times[sel],
                          self.states[sel], self.t_end)

    def first_jump_times(self) -> np.ndarray:
        out = np.full(len(self), np.inf)
        first = np.ones(len(self.chain), dtype=bool)
        first[1:] = self.chain[1:] != self.chain[:-1]
        out[self.chain[first]] = self.times[first]
        return out

    def segments(self, t_upper: float | None = None):
        """Holding segments (chain, start, end, state), clipped to [t0, t_upper]."""
        t_upper = self.t_end if t_upper is None else t_upper
        n = len(self)
        chain = np.concatenate([np.arange(n), self.chain])
        start = np.concatenate([np.full(n, self.t0), self.times])
        state = np.concatenate([self.x0, self.states])
        order = np.lexsort((start, chain))
        chain, start, state = chain[order], start[order], state[order]
        end = np.empty_like(start)
        end[:-1] = start[1:]
        last = np.ones(len(chain), dtype=bool)
        last[:-1] = chain[1:] != chain[:-1]
        end[last] = self.t_end
        end = np.minimum(end, t_upper)
        keep = end > start
        return chain[keep], start[keep], end[keep], state[keep]


def integrate_along(batch: TrajectoryBatch, func: Callable, quad_steps: int = 17,
                    t_upper: float | None = None, breakpoints: Iterable = ()) -> np.ndarray:
    """Per-chain integral of ``func(t, x)`` along the path, composite Simpson per segment.

    ``func`` takes matching 1-d arrays of times and flat states and returns values.
    Segments are additionally cut at ``breakpoints``.
    """
    chain, start, end, state = batch.segments(t_upper)
    lo_hi = split_points(batch.t0, batch.t_end if t_upper is None else t_upper, breakpoints)
    u_unit, w_unit = simpson_rule(0.0, 1.0, quad_steps)
    total = np.zeros(len(batch))
    chunk = max(1, (1 << 20) // len(u_unit))
    for a, b in zip(lo_hi[:-1], lo_hi[1:]):
        s = np.maximum(start, a)
        e = np.minimum(end, b)
        sel = np.flatnonzero(e > s)
        for lo in range(0, len(sel), chunk):
            idx = sel[lo:lo + chunk]
            length = e[idx] - s[idx]
            nodes = s[idx, None] + length[:, None] * u_unit[None, :]
            vals = np.asarray(func(nodes.ravel(), np.repeat(state[idx], len(u_unit))), dtype=float)
            seg = (vals.reshape(len(idx), -1) @ w_unit) * length
            total += np.bincount(chain[idx], weights=seg, minlength=len(batch))
    return total


def _target_mask(sp: StateSpace, target_set) -> np.ndarray:
    if target_set is None:
        return np.ones(sp.n_states, dtype=bool)
    if callable(target_set):
        return np.array([bool(target_set(sp.state_at(i))) for i in range(sp.n_states)])
    arr = np.asarray(target_set)
    if arr.dtype == bool:
        return arr
    mask = np.zeros(sp.n_states, dtype=bool)
    mask[arr.astype(np.int64)] = True
    return mask


def jump_count(traj, window: tuple[float, float], target_set=None):
    """N((t1, t2], A): jumps inside the window landing in ``target_set``.

    ``target_set`` may be a predicate on State, a boolean mask over flat indices,
    a collection of flat indices, or None for the whole space. A batch returns
    one count per chain.
    """
    t1, t2 = window
    if t1 < traj.t0 or t2 > traj.t_end or t2 < t1:
        raise DomainError(f"window {window} not inside [{traj.t0}, {traj.t_end}]")
    mask = _target_mask(traj.space, target_set)
    hit = (traj.times > t1) & (traj.times <= t2) & mask[traj.states]
    if isinstance(traj, TrajectoryBatch):
        return np.bincount(traj.chain[hit], minlength=len(traj))
    return int(hit.sum())


def compensator(batch: TrajectoryBatch, rate: Rate, t: float | None = None, target_set=None,
                quad_steps: int = 17) -> np.ndarray:
    """Per chain N((t0, t], A) - int_{t0}^t sum_{z in A, z ~ X(s)} u_s(z, X(s)) ds.

    This is a martingale in t, so its mean is zero.
    """
    t = batch.t_end if t is None else t
    sp = batch.space
    mask = _target_mask(sp, target_set)
    into = mask[sp.neighbors] & ~sp.self_mask

    def intensity(tt, x):
        return (rate.rates(tt, x) * into[x]).sum(axis=(1, 2))

    integral = integrate_along(batch, intensity, quad_steps, t_upper=t, breakpoints=rate.breakpoints)
    return jump_count(batch, (batch.t0, t), mask) - integral


# ---------------------------------------------------------------------------
# Partitions and thinning


@dataclass(frozen=True, eq=False)
class TimePartition:
    """Grid t_0 < ... < t_N with a dominating rate per interval."""

    grid: np.ndarray
    lambdas: np.ndarray = field(repr=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        lam = np.asarray(self.lambdas, dtype=float)
        if g.ndim != 1 or len(g) < 2 or np.any(np.diff(g) <= 0):
            raise DomainError("partition grid must be strictly increasing with >= 2 points")
        if lam.shape != (len(g) - 1,) or np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise DomainError("need one finite nonnegative lambda per interval")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "lambdas", lam)

    @property
    def expected_steps(self) -> float:
        """Expected number of candidate events, sum_k lambda_k (t_{k+1} - t_k)."""
        return float(np.sum(self.lambdas * np.diff(self.grid)))

    def verify(self, rate: Rate, subgrid: int = SUBGRID) -> bool:
        return bool(np.all(_interval_maxima(rate, self.grid, subgrid) <= self.lambdas))


def _interval_maxima(rate: Rate, grid: np.ndarray, subgrid: int) -> np.ndarray:
    n = rate.space.n_states
    bps = np.asarray(rate.breakpoints, dtype=float)
    out = np.empty(len(grid) - 1)
    for k, (a, b) in enumerate(zip(grid[:-1], grid[1:])):
        ts = np.linspace(a, b, subgrid)
        inner = bps[(bps > a) & (bps <= b)]
        ts = np.concatenate([ts, inner, np.nextafter(inner, -np.inf)])
        flows = rate.outflow(np.repeat(ts, n), np.tile(np.arange(n), len(ts)))
        out[k] = flows.max()
    return out


def build_partition(rate: Rate, tau: float, n_intervals: int = 1, t0: float = 0.0,
                    t_end: float | None = None, subgrid: int = SUBGRID,
                    headroom: float = HEADROOM) -> TimePartition:
    """Uniform grid on [t0, 1 - tau] with lambda_k = headroom * max outflow on the interval.

    The max runs over a ``subgrid``-point sub-grid (plus breakpoints) and all states.
    """
    if n_intervals < 1:
        raise DomainError("n_intervals must be >= 1")
    t_end = 1.0 - tau if t_end is None else t_end
    grid = np.linspace(t0, t_end, n_intervals + 1)
    return TimePartition(grid, headroom * _interval_maxima(rate, grid, subgrid))


def _thin(rate: Rate, x: np.ndarray, partition: TimePartition, gen: np.random.Generator,
          record: bool = False):
    """Advance chains ``x`` through the partition; returns final states, Poisson total, events."""
    sp = rate.space
    x = x.copy()
    n = len(x)
    draws = 0
    events = []
    for k, lam in enumerate(partition.lambdas):
        a, b = partition.grid[k], partition.grid[k + 1]
        counts = gen.poisson(lam * (b - a), size=n) if lam > 0 else np.zeros(n, dtype=np.int64)
        draws += int(counts.sum())
        m_max = int(counts.max()) if n else 0
        if m_max == 0:
            continue
        cand = gen.uniform(a, b, size=(n, m_max))
        cand[np.arange(m_max)[None, :] >= counts[:, None]] = np.inf
        cand.sort(axis=1)
        for j in range(m_max):
            active = np.flatnonzero(counts > j)
            t = cand[active, j]
            cur = x[active]
            r = rate.rates(t, cur).reshape(len(active), -1)
            cum = np.cumsum(r, axis=1)
            total = cum[:, -1]
            if np.any(total > lam * (1.0 + 1e-12)):
                i = int(np.argmax(total - lam))
                raise RateBoundError(
                    f"outflow {total[i]:.6g} exceeds dominating rate {lam:.6g} at t={t[i]:.6g}, "
                    f"state {sp.decode(cur[i])}, interval [{a:.6g}, {b:.6g}]"
                )
            u = gen.uniform(size=len(active)) * lam
            jump = u < total
            if not np.any(jump):
                continue
            pick = (cum[jump] < u[jump, None]).sum(axis=1)
            d, z = np.divmod(pick, sp.vocab_size)
            rows = active[jump]
            new = sp.neighbors[x[rows], d, z]
            if record:
                events.append((rows, t[jump], x[rows].copy(), new))
            x[rows] = new
    return x, draws, events


def _partition_for(rate: Rate, t0: float, t1: float, n_intervals: int) -> TimePartition:
    return build_partition(rate, 0.0, n_intervals, t0=t0, t_end=t1)


def simulate_batch(rate: Rate, x0, t0: float, t1: float, rng, n_intervals: int = 8,
                   partition: TimePartition | None = None) -> TrajectoryBatch:
    """Simulate chains started at flat states ``x0`` over [t0, t1], recording every jump."""
    x0 = np.asarray(x0, dtype=np.int64)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    part = partition if partition is not None else _partition_for(rate, t0, t1, n_intervals)
    _, _, events = _thin(rate, x0, part, gen, record=True)
    if events:
        chain, times, prev, states = (np.concatenate(c) for c in zip(*events))
        order = np.argsort(chain, kind="stable")
        chain, times, prev, states = chain[order], times[order], prev[order], states[order]
    else:
        chain = prev = states = np.zeros(0, dtype=np.int64)
        times = np.zeros(0)
    return TrajectoryBatch(rate.space, float(t0), float(t1), x0, chain, times, prev, states)


def simulate_exact(rate: Rate, x0: State, t0: float, t1: float, rng: RngStream,
                   n_intervals: int = 8) -> Trajectory:
    """One exactly distributed trajectory by thinning a dominating Poisson clock."""
    if x0.space != rate.space:
        raise DomainError("x0 and rate live on different spaces")
    batch = simulate_batch(rate, [x0.index], t0, t1, rng.generator(), n_intervals)
    tr = batch.trajectory(0)
    return Trajectory(tr.space, tr.t0, tr.x0, tr.times, tr.states, tr.t_end, rng.seed, rng.stream)


def draw_initial(p0: DenseDistribution, n: int, gen: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws of flat indices from a dense table."""
    cdf = np.cumsum(p0.mass)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, gen.uniform(size=n), side="right"), len(cdf) - 1)


def uniformization_samples(model: Rate, p0: DenseDistribution, partition: TimePartition,
                           rng, n: int, return_draws: bool = False):
    """``n`` independent draws of Y_N ~ p_hat at the partition's end (flat indices)."""
    if p0.space != model.space:
        raise DomainError("p0 and model live on different spaces")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    y = draw_initial(p0, n, gen)
    y, draws, _ = _thin(model, y, partition, gen)
    return (y, draws) if return_draws else y


def uniformization_sample(model: Rate, p0: DenseDistribution, partition: TimePartition,
                          rng: RngStream) -> State:
    y = uniformization_samples(model, p0, partition, rng, 1)
    return model.space.state_at(int(y[0]))


def empirical_distribution(space: StateSpace, samples) -> DenseDistribution:
    counts = np.bincount(np.asarray(samples, dtype=np.int64), minlength=space.n_states)
    return DenseDistribution.renormalize(space, counts.astype(float))
