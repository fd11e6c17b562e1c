"""Factorized mixture probability paths and the rates that generate them.

Per coordinate the conditional path is

    p_{t|1}(x^d | x_1^d) = (1 - kappa_t) p_0^d(x^d) + kappa_t [x^d == x_1^d]

and it is generated by the conditional rate kappa_dot_t / (1 - kappa_t)
toward x_1^d. The marginal (oracle) rate averages the conditional rate
over the exact posterior of X(1) given X(t) = x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DenseDistribution, Schedule, State, StateSpace
from .exceptions import DomainError, SingularityError, UndefinedPosteriorError
from .rates import Rate

TAU_MIN = 1e-6
GRID_POINTS = 1024


def check_time(t, upper: float = 1.0) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0) or np.any(arr > upper):
        raise DomainError(f"time outside [0, {upper}]: {t!r}")
    return arr


def check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 0.5:
        raise DomainError(f"tau must lie in the open interval (0, 1/2), got {tau}")
    if tau < TAU_MIN:
        raise SingularityError(f"tau={tau} is below the singularity floor {TAU_MIN}")
    return tau


def _rate_times(t) -> np.ndarray:
    arr = check_time(t)
    if np.any(arr > 1.0 - TAU_MIN):
        raise SingularityError(
            f"conditional rates diverge as t -> 1; evaluation needs t <= 1 - {TAU_MIN}"
        )
    return arr


@dataclass(frozen=True, eq=False)
class MixturePath:
    """Space, schedule and a product-form source given per coordinate.

    ``source`` has shape (dim, vocab_size); ``None`` means uniform.
    """

    space: StateSpace
    schedule: Schedule = field(default_factory=Schedule)
    source: np.ndarray | None = None

    def __post_init__(self):
        sp = self.space
        if self.source is None:
            src = np.full((sp.dim, sp.vocab_size), 1.0 / sp.vocab_size)
        else:
            src = np.array(self.source, dtype=float)
            if src.ndim == 1:
                src = np.tile(src, (sp.dim, 1))
        if src.shape != (sp.dim, sp.vocab_size):
            raise DomainError(f"source table must have shape {(sp.dim, sp.vocab_size)}")
        if np.any(src < 0) or np.any(np.abs(src.sum(axis=1) - 1.0) > 1e-10):
            raise DomainError("each per-coordinate source vector must be a distribution")
        src.setflags(write=False)
        object.__setattr__(self, "source", src)

    @property
    def uniform_source(self) -> bool:
        return bool(np.allclose(self.source, 1.0 / self.space.vocab_size, rtol=0, atol=1e-15))

    def source_distribution(self) -> DenseDistribution:
        sp = self.space
        d_idx = np.arange(sp.dim)
        return DenseDistribution.renormalize(sp, np.prod(self.source[d_idx, sp.symbols], axis=1))

    def coordinate_probs(self, t: float) -> np.ndarray:
        """(dim, vocab_size[x], vocab_size[x1]) table of p^d_{t|1}(x | x1)."""
        k, _ = self.schedule(float(check_time(t)))
        eye = np.eye(self.space.vocab_size)
        return (1.0 - k) * self.source[:, :, None] + k * eye[None]

    def conditional_matrix(self, t: float, x1_idx=None) -> np.ndarray:
        """p_{t|1}(x | x1) for all x (rows) and the given x1 flat indices (columns)."""
        sp = self.space
        x1_idx = np.arange(sp.n_states) if x1_idx is None else np.asarray(x1_idx)
        cp = self.coordinate_probs(t)
        sym = sp.symbols
        out = np.ones((sp.n_states, len(x1_idx)))
        for d in range(sp.dim):
            out *= cp[d][sym[:, d][:, None], sym[x1_idx, d][None, :]]
        return out

    def conditional_derivative(self, t: float, x1_idx=None) -> np.ndarray:
        """Closed-form d/dt p_{t|1}(x | x1) by the product rule."""
        sp = self.space
        x1_idx = np.arange(sp.n_states) if x1_idx is None else np.asarray(x1_idx)
        cp = self.coordinate_probs(t)
        _, kd = self.schedule(float(t))
        eye = np.eye(sp.vocab_size)
        dcp = kd * (eye[None] - self.source[:, :, None])
        sym = sp.symbols
        rows, cols = sym[:, None, :], sym[x1_idx][None, :, :]
        d_idx = np.arange(sp.dim)
        factors = cp[d_idx, rows, cols]
        dfactors = dcp[d_idx, rows, cols]
        out = np.zeros((sp.n_states, len(x1_idx)))
        for d in range(sp.dim):
            others = np.prod(np.delete(factors, d, axis=2), axis=2)
            out += dfactors[:, :, d] * others
        return out


@dataclass(frozen=True, eq=False)
class TargetModel:
    """The data distribution p_1 as an explicit table."""

    p1: DenseDistribution

    @property
    def space(self) -> StateSpace:
        return self.p1.space

    @property
    def full_support(self) -> bool:
        return self.p1.full_support

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.p1.mass > 0)

    @classmethod
    def load(cls, path) -> TargetModel:
        return cls(DenseDistribution.load(path))


def conditional_prob(path: MixturePath, t: float, x: State, x1: State) -> float:
    k, _ = path.schedule(float(check_time(t)))
    out = 1.0
    for d in range(path.space.dim):
        a, b = x.coords[d] - 1, x1.coords[d] - 1
        out *= (1.0 - k) * path.source[d, a] + k * (a == b)
    return out


def conditional_rate(path: MixturePath, t: float, x: State, d: int, z_d: int, x1: State) -> float:
    if z_d == x.coords[d]:
        raise DomainError("z_d must differ from x^d")
    c = float(path.schedule.rate_factor(float(_rate_times(t))))
    return c if z_d == x1.coords[d] else 0.0


def marginal(path: MixturePath, target: TargetModel, t: float) -> DenseDistribution:
    """Exact p_t = sum_{x1} p_{t|1}(. | x1) p_1(x1)."""
    supp = target.support
    m = path.conditional_matrix(t, supp) @ target.p1.mass[supp]
    return DenseDistribution.renormalize(path.space, m)


def marginal_derivative(path: MixturePath, target: TargetModel, t: float) -> np.ndarray:
    supp = target.support
    return path.conditional_derivative(t, supp) @ target.p1.mass[supp]


class ConditionalRate(Rate):
    """u_t(., . | x_1) for a fixed endpoint x_1 (flat index)."""

    def __init__(self, path: MixturePath, x1: int):
        self.space = path.space
        self.path = path
        self.x1 = int(x1)
        self._onehot = np.eye(self.space.vocab_size)[self.space.symbols[self.x1]]

    def _rates(self, t, x):
        c = self.path.schedule.rate_factor(_rate_times(t))
        return c[:, None, None] * np.broadcast_to(self._onehot, (len(t),) + self._onehot.shape)


class OracleRate(Rate):
    """The marginal rate u^0_t(z, x) = E[u_t(z, x | X(1)) | X(t) = x].

    Computed by exact enumeration over supp(p_1), in log space.
    """

    _CHUNK = 1 << 21

    def __init__(self, path: MixturePath, target: TargetModel):
        if path.space != target.space:
            raise DomainError("path and target live on different spaces")
        self.space = path.space
        self.path = path
        self.target = target
        supp = target.support
        self._supp_sym = self.space.symbols[supp]
        self._log_p1 = np.log(target.p1.mass[supp])
        self._onehot = np.eye(self.space.vocab_size)[self._supp_sym]

    def posterior(self, t, x) -> np.ndarray:
        """p_{1|t}(x1 | x) over supp(p_1), shape (m, |supp|)."""
        t = check_time(np.atleast_1d(t))
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        t, x = np.broadcast_arrays(t, x)
        k, _ = self.path.schedule(t)
        sym = self.space.symbols[x]
        d_idx = np.arange(self.space.dim)
        src = self.path.source[d_idx[None, :], sym]
        match = sym[:, None, :] == self._supp_sym[None, :, :]
        fac = (1.0 - k)[:, None, None] * src[:, None, :] + k[:, None, None] * match
        with np.errstate(divide="ignore"):
            logw = self._log_p1[None, :] + np.log(fac).sum(axis=2)
        top = logw.max(axis=1)
        if np.any(~np.isfinite(top)):
            bad = int(x[np.argmax(~np.isfinite(top))])
            raise UndefinedPosteriorError(
                f"p_t(x) = 0 for state {self.space.decode(bad)}; oracle rate undefined"
            )
        w = np.exp(logw - top[:, None])
        return w / w.sum(axis=1, keepdims=True)

    def _rates(self, t, x):
        c = self.path.schedule.rate_factor(_rate_times(t))
        n_supp = max(1, len(self._log_p1) * self.space.dim * self.space.vocab_size)
        step = max(1, self._CHUNK // n_supp)
        out = np.empty((len(t), self.space.dim, self.space.vocab_size))
        for lo in range(0, len(t), step):
            sl = slice(lo, lo + step)
            post = self.posterior(t[sl], x[sl])
            out[sl] = c[sl, None, None] * np.einsum("ik,kds->ids", post, self._onehot)
        return out


def oracle_rate(path: MixturePath, target: TargetModel, t: float, x: State, d: int, z_d: int) -> float:
    return OracleRate(path, target)(t, x, d, z_d)


@dataclass
class SingularityRecord:
    state: tuple
    to: tuple
    limit: float  # math.inf when the rate diverges as t -> 1

    def to_json(self) -> dict:
        return {"state": list(self.state), "to": list(self.to),
                "limit": "infinite" if math.isinf(self.limit) else self.limit}


@dataclass
class SingularityReport:
    records: list

    @property
    def n_singular(self) -> int:
        return sum(math.isinf(r.limit) for r in self.records)

    def to_json(self) -> list:
        return [r.to_json() for r in self.records]


def singularity_report(path: MixturePath, target: TargetModel) -> SingularityReport:
    """Limits of the oracle rate on Hamming-1 pairs as t -> 1.

    For p_1(x) > 0 the limit is kappa_dot_1 p_0^d(x^d) p_1(z) / p_1(x).
    For p_1(x) = 0 the posterior concentrates on the nearest support states;
    every z it then reaches with positive probability is flagged infinite.
    """
    sp = path.space
    _, kd1 = path.schedule(1.0)
    p1 = target.p1.mass
    sym = sp.symbols
    supp = target.support
    records = []
    for x in range(sp.n_states):
        if p1[x] > 0:
            for d in range(sp.dim):
                for z in range(sp.vocab_size):
                    if z == sym[x, d]:
                        continue
                    zi = int(sp.neighbors[x, d, z])
                    lim = kd1 * path.source[d, sym[x, d]] * p1[zi] / p1[x]
                    records.append(SingularityRecord(sp.decode(x), sp.decode(zi), float(lim)))
            continue
        dist = (sym[supp] != sym[x][None, :]).sum(axis=1)
        near = supp[dist == dist.min()]
        for d in range(sp.dim):
            reach = {int(sym[x1, d]) for x1 in near} - {int(sym[x, d])}
            for z in sorted(reach):
                zi = int(sp.neighbors[x, d, z])
                records.append(SingularityRecord(sp.decode(x), sp.decode(zi), math.inf))
    return SingularityReport(records)


def time_grid(tau: float, n: int = GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0 - tau, n)


def conditional_rate_bound(schedule: Schedule, tau: float) -> float:
    """Closed-form upper bound on kappa_dot/(1-kappa) over [0, 1-tau]: 1/tau or 2/tau."""
    return (2.0 if schedule.kind == "cosine" else 1.0) / tau


def boundedness_constants(path: MixturePath, target: TargetModel, tau: float) -> tuple[float, float]:
    """(sup conditional rate, inf oracle rate on Hamming-1 pairs) over [0, 1-tau]."""
    tau = check_tau(tau)
    grid = time_grid(tau)
    m_bar = float(np.max(path.schedule.rate_factor(grid)))
    oracle = OracleRate(path, target)
    sp = path.space
    lo = math.inf
    for t in grid:
        tab = oracle.table(t)
        lo = min(lo, float(tab[~sp.self_mask].min()))
    return m_bar, lo


def mixing_coefficients(target: TargetModel) -> tuple[float, float]:
    """(alpha, beta) for p_1 by exhaustive enumeration.

    alpha bounds p_1(x^{\\d} | x^d) / p_1(x^{\\d}) within [alpha, 1/alpha];
    beta is the largest ratio between two symbols' marginal probabilities.
    """
    sp = target.space
    p = target.p1.mass.reshape((sp.vocab_size,) * sp.dim)
    alpha = 1.0
    beta = 0.0
    for d in range(sp.dim):
        marg_d = p.sum(axis=tuple(i for i in range(sp.dim) if i != d))
        comp = p.sum(axis=d, keepdims=True)
        denom = np.expand_dims(marg_d, tuple(i for i in range(sp.dim) if i != d)) * comp
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(denom > 0, p / denom, 0.0)
        if sp.dim > 1:
            vals = r[denom > 0]
            with np.errstate(divide="ignore"):
                ratio = np.where(vals > 0, np.minimum(vals, 1.0 / vals), 0.0)
            alpha = min(alpha, float(ratio.min()))
        if marg_d.min() == 0:
            beta = math.inf
        else:
            beta = max(beta, float(marg_d.max() / marg_d.min()))
    return alpha, beta


def oracle_lower_bound(path: MixturePath, target: TargetModel, tau: float) -> float:
    """|S|^{-1} alpha^2 / beta * inf kappa_dot over [0, 1-tau], for a uniform source."""
    alpha, beta = mixing_coefficients(target)
    _, kd = path.schedule(time_grid(tau))
    return float(alpha**2 / beta * kd.min() / path.space.vocab_size)
