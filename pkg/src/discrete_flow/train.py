"""Generator matching by empirical risk minimization over tabular rates.

The training loss of a rate u on a sample (t, x_t, x_1) is

    sum_{z ~ x_t} [ -v(z) log u_t(z, x_t) + u_t(z, x_t) ]

where v is the conditional rate toward x_1 and the sum runs over Hamming-1
neighbors. Over time-binned tables the minimizer is the per-cell mean of v,
clamped to the envelope [u_min, u_max].
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._numerics import fsum, piecewise_simpson
from .core import State, StateSpace
from .ctmc import RngStream, draw_initial
from .exceptions import DomainError
from .paths import MixturePath, OracleRate, TargetModel, check_tau, marginal
from .rates import Rate
from .girsanov import bregman_array

SCHEMA_VERSION = 1
T_NODES = 257
CHUNK = 50_000


@dataclass(frozen=True)
class Sample:
    t: float
    x_t: State
    x_1: State


@dataclass(frozen=True, eq=False)
class Dataset:
    """Training triples (t_i, X_i(t_i), X_i(1)) with states as flat indices."""

    space: StateSpace
    tau: float
    t: np.ndarray
    x_t: np.ndarray
    x_1: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        xt = np.asarray(self.x_t, dtype=np.int64)
        x1 = np.asarray(self.x_1, dtype=np.int64)
        if not (t.shape == xt.shape == x1.shape) or t.ndim != 1:
            raise DomainError("t, x_t and x_1 must be 1-d arrays of equal length")
        if np.any(t < 0) or np.any(t > 1.0 - self.tau):
            raise DomainError(f"sample times must lie in [0, 1 - tau] = [0, {1 - self.tau}]")
        n = self.space.n_states
        if np.any((xt < 0) | (xt >= n) | (x1 < 0) | (x1 >= n)):
            raise DomainError("state indices out of range")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x_t", xt)
        object.__setattr__(self, "x_1", x1)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Sample:
        sp = self.space
        return Sample(float(self.t[i]), sp.state_at(self.x_t[i]), sp.state_at(self.x_1[i]))

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.t, self.x_t, self.x_1])

    def concat(self, other: Dataset) -> Dataset:
        return Dataset(self.space, self.tau, np.concatenate([self.t, other.t]),
                       np.concatenate([self.x_t, other.x_t]), np.concatenate([self.x_1, other.x_1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x_t", "x_1"])
        for row in zip(self.t, self.x_t, self.x_1):
            w.writerow([repr(float(row[0])), int(row[1]), int(row[2])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, space: StateSpace, tau: float) -> Dataset:
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(space, tau, np.array([float(r["t"]) for r in rows]),
                   np.array([int(r["x_t"]) for r in rows]), np.array([int(r["x_1"]) for r in rows]))


def generate_dataset(path: MixturePath, target: TargetModel, tau: float, n: int, rng: RngStream,
                     t_fixed: float | None = None) -> Dataset:
    """Draw n i.i.d. triples: x_1 ~ p_1, t ~ U[0, 1 - tau], x_t ~ p_{t|1}(. | x_1).

    Samples are produced in fixed chunks, each from its own substream.
    ``t_fixed`` pins every time (for tests of the conditional law).
    """
    tau = check_tau(tau)
    if n < 1:
        raise DomainError("n must be >= 1")
    sp = path.space
    parts = []
    for i, lo in enumerate(range(0, n, CHUNK)):
        m = min(CHUNK, n - lo)
        gen = rng.substream(i)
        x1 = draw_initial(target.p1, m, gen)
        t = gen.uniform(0.0, 1.0 - tau, size=m) if t_fixed is None else np.full(m, float(t_fixed))
        k, _ = path.schedule(t)
        keep = gen.uniform(size=(m, sp.dim)) < k[:, None]
        cdf = np.cumsum(path.source, axis=1)
        u = gen.uniform(size=(m, sp.dim))
        fresh = (u[:, :, None] >= cdf[None, :, :]).sum(axis=2).clip(max=sp.vocab_size - 1)
        sym = np.where(keep, sp.symbols[x1], fresh)
        xt = sym @ sp._strides
        parts.append((t, xt, x1))
    t, xt, x1 = (np.concatenate(c) for c in zip(*parts))
    return Dataset(sp, tau, t, xt, x1)


def _target_terms(path: MixturePath, t: np.ndarray, xt: np.ndarray, x1: np.ndarray):
    """Conditional rate factor per sample and the (d, z) each sample's rate points to."""
    sp = path.space
    c = path.schedule.rate_factor(t)
    mism = sp.symbols[xt] != sp.symbols[x1]
    return c, mism, sp.symbols[x1]


def empirical_loss(model: Rate, data: Dataset, path: MixturePath) -> float:
    """Mean over samples of sum_z [-v log u + u] on Hamming-1 neighbors."""
    if len(data) == 0:
        raise DomainError("empty dataset")
    sp = path.space
    u = model.rates(data.t, data.x_t)
    if np.any(u < 0):
        raise DomainError("model produced a negative rate")
    c, mism, sym1 = _target_terms(path, data.t, data.x_t, data.x_1)
    rows = np.arange(len(data))[:, None]
    dims = np.arange(sp.dim)[None, :]
    u_target = u[rows, dims, sym1]
    if np.any(u_target[mism] <= 0):
        raise DomainError("model rate must be positive wherever the conditional rate is")
    with np.errstate(divide="ignore"):
        logs = np.where(mism, np.log(np.where(mism, u_target, 1.0)), 0.0).sum(axis=1)
    per = u.sum(axis=(1, 2)) - c * logs
    return fsum(per) / len(data)


def _as_xy(X, space: StateSpace | None, tau: float | None):
    if isinstance(X, Dataset):
        return X
    arr = check_array(X, ensure_2d=True, dtype=float)
    if arr.shape[1] != 3:
        raise DomainError("expected columns (t, x_t, x_1)")
    if np.any(arr[:, 1:] != np.round(arr[:, 1:])):
        raise DomainError("state columns must hold integer flat indices")
    return Dataset(space, tau, arr[:, 0], arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64))


class TabularRateModel(BaseEstimator, Rate):
    """Time-binned table of rates u(bin, x, d, z), fitted by exact ERM.

    Parameters
    ----------
    path : MixturePath
        Supplies the conditional rates used as regression targets.
    tau : float
        Early-stopping time; bins split [0, 1 - tau] uniformly.
    n_time_bins : int
        Number of time bins. Bins are right-open except the last.
    clamp : tuple of float
        Envelope (u_min, u_max). Empty cells get the midpoint.
    """

    def __init__(self, path: MixturePath | None = None, tau: float = 0.05, n_time_bins: int = 16,
                 clamp: tuple = (1e-3, 1e3)):
        self.path = path
        self.tau = tau
        self.n_time_bins = n_time_bins
        self.clamp = clamp

    def _validate_params(self):
        check_tau(self.tau)
        if int(self.n_time_bins) != self.n_time_bins or self.n_time_bins < 1:
            raise DomainError("n_time_bins must be a positive integer")
        lo, hi = self.clamp
        if not 0 < lo <= hi < math.inf:
            raise DomainError(f"clamp must satisfy 0 < u_min <= u_max < inf, got {self.clamp}")

    # -- Rate interface -----------------------------------------------------
    @property
    def space(self) -> StateSpace:
        if hasattr(self, "space_"):
            return self.space_
        return self.path.space

    @property
    def breakpoints(self) -> tuple:
        if not hasattr(self, "bin_edges_"):
            return ()
        return tuple(float(b) for b in self.bin_edges_[1:-1])

    def bin_index(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        b = np.floor(t / (1.0 - self.tau) * self.n_time_bins).astype(np.int64)
        return np.clip(b, 0, self.n_time_bins - 1)

    def _rates(self, t, x):
        check_is_fitted(self, "table_")
        return self.table_[self.bin_index(t), x].copy()

    # -- estimator API ------------------------------------------------------
    def fit(self, X, y=None):
        """Per-cell mean of the conditional rate, clamped; ``X`` is a Dataset or (n, 3) array."""
        self._validate_params()
        if self.path is None:
            raise DomainError("fitting needs a MixturePath")
        sp = self.path.space
        data = _as_xy(X, sp, self.tau)
        if len(data) == 0:
            raise DomainError("cannot fit on an empty dataset")
        nb, n = self.n_time_bins, sp.n_states
        b = self.bin_index(data.t)
        counts = np.bincount(b * n + data.x_t, minlength=nb * n).reshape(nb, n)
        c, mism, sym1 = _target_terms(self.path, data.t, data.x_t, data.x_1)
        vsum = np.zeros((nb, n, sp.dim, sp.vocab_size))
        rows, dims = np.nonzero(mism)
        np.add.at(vsum, (b[rows], data.x_t[rows], dims, sym1[rows, dims]), c[rows])
        lo, hi = self.clamp
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = vsum / counts[:, :, None, None]
        table = np.where(counts[:, :, None, None] > 0, np.clip(mean, lo, hi), 0.5 * (lo + hi))
        table[:, sp.self_mask] = 0.0
        self.space_ = sp
        self.table_ = table
        self.bin_edges_ = np.linspace(0.0, 1.0 - self.tau, nb + 1)
        self.cell_counts_ = counts
        self.n_empty_cells_ = int(np.sum(counts == 0) * sp.dim * (sp.vocab_size - 1))
        self.n_samples_ = len(data)
        return self

    def predict(self, X) -> np.ndarray:
        """Rates for rows (t, x): array of shape (m, dim, vocab_size)."""
        check_is_fitted(self, "table_")
        arr = check_array(X, ensure_2d=True, dtype=float)
        if arr.shape[1] != 2:
            raise DomainError("expected columns (t, x)")
        return self.rates(arr[:, 0], arr[:, 1].astype(np.int64))

    def score(self, X, y=None) -> float:
        """Negative empirical loss (higher is better)."""
        data = _as_xy(X, self.space, self.tau)
        return -empirical_loss(self, data, self.path)

    # -- construction and persistence ---------------------------------------
    @classmethod
    def from_table(cls, space: StateSpace, tau: float, table, clamp=(1e-3, 1e3),
                   path: MixturePath | None = None) -> TabularRateModel:
        tab = np.array(table, dtype=float)
        if tab.ndim != 4 or tab.shape[1:] != (space.n_states, space.dim, space.vocab_size):
            raise DomainError(f"table must have shape (bins, {space.n_states}, {space.dim}, {space.vocab_size})")
        model = cls(path, tau, tab.shape[0], tuple(clamp))
        model._validate_params()
        tab[:, space.self_mask] = 0.0
        model.space_ = space
        model.table_ = tab
        model.bin_edges_ = np.linspace(0.0, 1.0 - tau, tab.shape[0] + 1)
        return model

    def to_json(self) -> dict:
        check_is_fitted(self, "table_")
        sp = self.space
        return {
            "schema_version": SCHEMA_VERSION,
            "vocab_size": sp.vocab_size,
            "dim": sp.dim,
            "tau": self.tau,
            "bins": self.n_time_bins,
            "clamp": [float(c) for c in self.clamp],
            "entries": self.table_.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict, path: MixturePath | None = None) -> TabularRateModel:
        sp = StateSpace(int(obj["vocab_size"]), int(obj["dim"]))
        model = cls.from_table(sp, float(obj["tau"]), obj["entries"], tuple(obj["clamp"]), path)
        if model.n_time_bins != int(obj["bins"]):
            raise DomainError("bins field disagrees with the entries table")
        return model


def fit_tabular(data: Dataset, path: MixturePath, n_time_bins: int = 16,
                clamp: tuple = (1e-3, 1e3)) -> TabularRateModel:
    return TabularRateModel(path, data.tau, n_time_bins, clamp).fit(data)


def random_tabular(space: StateSpace, tau: float, n_time_bins: int, clamp, gen: np.random.Generator,
                   path: MixturePath | None = None) -> TabularRateModel:
    """Table drawn log-uniformly inside the clamp envelope."""
    lo, hi = clamp
    shape = (n_time_bins, space.n_states, space.dim, space.vocab_size)
    tab = np.exp(gen.uniform(math.log(lo), math.log(hi), size=shape))
    return TabularRateModel.from_table(space, tau, tab, clamp, path)


def _nodes(tau: float, t_nodes: int, breakpoints) -> tuple[np.ndarray, np.ndarray]:
    return piecewise_simpson(0.0, 1.0 - tau, t_nodes, breakpoints)


def population_loss(model: Rate, path: MixturePath, target: TargetModel, tau: float,
                    t_nodes: int = T_NODES, breakpoints=None) -> float:
    """L(u) = E over t ~ U[0, 1 - tau], x_1 ~ p_1, x_t ~ p_{t|1} of the training loss.

    Exact enumeration over (x_t, x_1); Simpson in t, restarted at breakpoints.
    """
    tau = check_tau(tau)
    sp = path.space
    bps = model.breakpoints if breakpoints is None else breakpoints
    nodes, weights = _nodes(tau, t_nodes, bps)
    supp = target.support
    p1 = target.p1.mass[supp]
    sym, sym1 = sp.symbols, sp.symbols[supp]
    mism = sym[:, None, :] != sym1[None, :, :]
    states = np.arange(sp.n_states)
    dims = np.arange(sp.dim)
    vals = np.empty(len(nodes))
    for i, t in enumerate(nodes):
        u = model.rates(np.full(sp.n_states, t), states)
        q = path.conditional_matrix(t, supp) * p1[None, :]
        u_target = u[states[:, None, None], dims[None, None, :], sym1[None, :, :]]
        live = mism & (q[:, :, None] > 0)
        if np.any(u_target[live] <= 0):
            raise DomainError("model rate vanishes where the conditional rate is positive")
        with np.errstate(divide="ignore"):
            logs = np.where(live, np.log(np.where(live, u_target, 1.0)), 0.0).sum(axis=2)
        c = float(path.schedule.rate_factor(t))
        vals[i] = fsum(q.sum(axis=1) * u.sum(axis=(1, 2))) - c * fsum(q * logs)
    return fsum(weights * vals) / (1.0 - tau)


def bregman_excess(model: Rate, path: MixturePath, target: TargetModel, tau: float,
                   t_nodes: int = T_NODES, breakpoints=None) -> float:
    """E[sum_z D_F(u^0 || u)] over t ~ U[0, 1 - tau], x ~ p_t, using the oracle rate."""
    tau = check_tau(tau)
    sp = path.space
    bps = model.breakpoints if breakpoints is None else breakpoints
    nodes, weights = _nodes(tau, t_nodes, bps)
    oracle = OracleRate(path, target)
    states = np.arange(sp.n_states)
    vals = np.empty(len(nodes))
    for i, t in enumerate(nodes):
        tt = np.full(sp.n_states, t)
        terms = bregman_array(oracle.rates(tt, states), model.rates(tt, states)).sum(axis=(1, 2))
        vals[i] = fsum(marginal(path, target, t).mass * terms)
    return fsum(weights * vals) / (1.0 - tau)


def best_in_class(path: MixturePath, target: TargetModel, tau: float, n_time_bins: int,
                  clamp: tuple, t_nodes: int = T_NODES) -> TabularRateModel:
    """Minimizer of E[sum_z D_F(u^0 || u)] over clamped time-binned tables.

    Per cell the minimizer is the p_t(x)-weighted time average of u^0 over the bin,
    clamped; integrals use the same Simpson nodes as ``population_loss``.
    """
    tau = check_tau(tau)
    sp = path.space
    edges = np.linspace(0.0, 1.0 - tau, n_time_bins + 1)
    nodes, weights = _nodes(tau, t_nodes, edges[1:-1])
    oracle = OracleRate(path, target)
    states = np.arange(sp.n_states)
    num = np.zeros((n_time_bins, sp.n_states, sp.dim, sp.vocab_size))
    den = np.zeros((n_time_bins, sp.n_states))
    # node i belongs to the piece it was generated for; nodes on shared edges are duplicated
    per = len(nodes) // n_time_bins
    for i, (t, w) in enumerate(zip(nodes, weights)):
        b = i // per
        p = marginal(path, target, t).mass
        num[b] += w * p[:, None, None] * oracle.rates(np.full(sp.n_states, t), states)
        den[b] += w * p
    lo, hi = clamp
    with np.errstate(invalid="ignore", divide="ignore"):
        tab = np.where(den[:, :, None, None] > 0, num / den[:, :, None, None], 0.5 * (lo + hi))
    return TabularRateModel.from_table(sp, tau, np.clip(tab, lo, hi), clamp, path)


@dataclass
class LossReport:
    empirical: float
    population: float
    oracle: float
    stochastic: float
    approximation: float
    excess: float
    n_samples: int
    n_empty_cells: int

    @property
    def decomposition_holds(self) -> bool:
        """L(u_hat) - L(u^0) <= stochastic + 2 * approximation."""
        return self.excess <= self.stochastic + 2.0 * self.approximation + 1e-12

    def to_json(self) -> dict:
        out = asdict(self)
        out["schema_version"] = SCHEMA_VERSION
        return out


def decompose_error(model: TabularRateModel, data: Dataset, path: MixturePath, target: TargetModel,
                    tau: float, t_nodes: int = T_NODES) -> LossReport:
    """All terms of the excess-risk decomposition for a fitted tabular model."""
    bps = model.breakpoints
    l_n = empirical_loss(model, data, path)
    l_hat = population_loss(model, path, target, tau, t_nodes)
    l_0 = population_loss(OracleRate(path, target), path, target, tau, t_nodes, breakpoints=bps)
    star = best_in_class(path, target, tau, model.n_time_bins, model.clamp, t_nodes)
    approx = max(0.0, population_loss(star, path, target, tau, t_nodes) - l_0)
    return LossReport(
        empirical=l_n, population=l_hat, oracle=l_0,
        stochastic=l_hat + l_0 - 2.0 * l_n, approximation=approx,
        excess=l_hat - l_0, n_samples=len(data),
        n_empty_cells=getattr(model, "n_empty_cells_", 0),
    )


def k1_diagnostic(m_bar_c: float, m_under_c: float, clamp: tuple) -> float:
    """2 Mc^2 (M + 1) / (min(1, m) mc), with the ratio envelope [m, M] from clamp / oracle range.

    Reported only; no contract is attached to its value.
    """
    lo, hi = clamp
    if m_under_c <= 0:
        return math.inf
    m_bar = hi / m_under_c
    m_under = lo / m_bar_c
    return 2.0 * m_bar_c**2 * (m_bar + 1.0) / (min(1.0, m_under) * m_under_c)


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True)
