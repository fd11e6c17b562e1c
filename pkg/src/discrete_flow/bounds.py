"""Closed-form error bounds next to the exactly computed distances they control.

The early-stopping term for a uniform source is

    varrho = 1 - (1 - (1 - kappa_{1-tau}) (|S| - 1) / |S|)^D,

the probability that a coupled pair (X(1), X(1 - tau)) disagrees. The
assembled bound on TV(p_1, p_hat_{1-tau}) adds sqrt(stochastic / 2) and
sqrt(approximation) from the loss decomposition.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import DenseDistribution, Schedule, StateSpace, total_variation
from .ctmc import RngStream, forward_integrate
from .exceptions import DomainError
from .girsanov import path_kl_exact
from .paths import MixturePath, OracleRate, TargetModel, check_tau, marginal
from .rates import Rate
from .train import (SCHEMA_VERSION, LossReport, decompose_error, fit_tabular,
                    generate_dataset)

SWEEP_COLUMNS = ("tau", "n", "stochastic", "approx", "varrho", "exact_tv", "assembled")


def early_stopping_bound(sched: Schedule, space: StateSpace, tau: float) -> float:
    """varrho(D, |S|, tau), evaluated as -expm1(D log1p(-eps))."""
    tau = check_tau(tau)
    kappa, _ = sched(1.0 - tau)
    eps = (1.0 - float(kappa)) * (space.vocab_size - 1) / space.vocab_size
    return float(-math.expm1(space.dim * math.log1p(-eps)))


def coupling_probability(sched: Schedule, space: StateSpace, tau: float) -> float:
    """P(X(1) != X(1 - tau)) under the per-coordinate coupling, in direct form."""
    tau = check_tau(tau)
    kappa = float(sched(1.0 - tau)[0])
    return 1.0 - (kappa + (1.0 - kappa) / space.vocab_size) ** space.dim


def _require_uniform(path: MixturePath) -> None:
    if not path.uniform_source:
        raise DomainError("the early-stopping bound assumes a uniform source")


def exact_early_stopping_tv(path: MixturePath, target: TargetModel, tau: float) -> tuple[float, float]:
    """(TV(p_1, p_{1-tau}) by enumeration, coupling probability)."""
    _require_uniform(path)
    tau = check_tau(tau)
    tv = total_variation(target.p1, marginal(path, target, 1.0 - tau))
    return tv, coupling_probability(path.schedule, path.space, tau)


def model_marginal(model: Rate, path: MixturePath, tau: float, steps: int = 2048) -> DenseDistribution:
    """p_hat_{1-tau}: the source pushed through ``model`` by the forward equation."""
    return forward_integrate(model, path.source_distribution(), 0.0, 1.0 - tau, steps)


@dataclass
class BoundReport:
    tau: float
    n: int
    varrho: float
    coupling_prob: float
    exact_tv_p1: float
    stochastic_raw: float
    stochastic: float
    approximation: float
    assembled: float
    exact_tv: float
    stochastic_floored: bool

    @property
    def holds(self) -> bool:
        """exact TV(p_1, p_hat_{1-tau}) <= assembled bound."""
        return self.exact_tv <= self.assembled + 1e-12

    def to_json(self) -> dict:
        out = asdict(self)
        out["holds"] = self.holds
        out["schema_version"] = SCHEMA_VERSION
        return out


def assemble_overall(loss: LossReport, model: Rate, path: MixturePath, target: TargetModel,
                     tau: float, steps: int = 2048) -> BoundReport:
    """sqrt(stochastic / 2) + sqrt(approximation) + varrho beside the exact TV it bounds.

    A negative empirical stochastic term is floored at zero; the raw value is kept.
    """
    _require_uniform(path)
    tau = check_tau(tau)
    varrho = early_stopping_bound(path.schedule, path.space, tau)
    tv_p1, coupling = exact_early_stopping_tv(path, target, tau)
    stoch = max(0.0, loss.stochastic)
    approx = max(0.0, loss.approximation)
    p_hat = model_marginal(model, path, tau, steps)
    return BoundReport(
        tau=tau, n=loss.n_samples, varrho=varrho, coupling_prob=coupling, exact_tv_p1=tv_p1,
        stochastic_raw=loss.stochastic, stochastic=stoch, approximation=approx,
        assembled=math.sqrt(stoch / 2.0) + math.sqrt(approx) + varrho,
        exact_tv=total_variation(target.p1, p_hat), stochastic_floored=loss.stochastic < 0,
    )


def pinsker_chain(model: Rate, path: MixturePath, target: TargetModel, tau: float,
                  steps: int = 2048, quad_steps: int = 257) -> tuple[float, float]:
    """(TV(p_1, p_hat_{1-tau}), sqrt(path KL / 2) + varrho) with the path KL of oracle vs model."""
    _require_uniform(path)
    tau = check_tau(tau)
    oracle = OracleRate(path, target)
    kl = path_kl_exact(oracle, model, path.source_distribution(), 1.0 - tau, quad_steps, steps=steps)
    tv = total_variation(target.p1, model_marginal(model, path, tau, steps))
    return tv, math.sqrt(kl / 2.0) + early_stopping_bound(path.schedule, path.space, tau)


def train_and_bound(path: MixturePath, target: TargetModel, tau: float, n: int, seed: int,
                    n_time_bins: int, clamp: tuple, stream: int = 0) -> BoundReport:
    """Draw a dataset, fit the tabular model and assemble every bound term."""
    data = generate_dataset(path, target, tau, n, RngStream(seed, stream))
    model = fit_tabular(data, path, n_time_bins, clamp)
    return assemble_overall(decompose_error(model, data, path, target, tau), model, path, target, tau)


def sweep(path: MixturePath, target: TargetModel, taus, ns, seeds, n_time_bins: int,
          clamp: tuple) -> list[dict]:
    """One row per (tau, n) grid point with per-column medians over ``seeds``."""
    taus, ns, seeds = list(taus), list(ns), list(seeds)
    if not taus or not ns or not seeds:
        raise DomainError("sweep needs at least one tau, one n and one seed")
    rows = []
    for i, tau in enumerate(taus):
        for j, n in enumerate(ns):
            reps = [train_and_bound(path, target, tau, n, s, n_time_bins, clamp, stream=i * len(ns) + j)
                    for s in seeds]
            med = {k: float(np.median([getattr(r, k) for r in reps]))
                   for k in ("stochastic_raw", "approximation", "exact_tv", "assembled")}
            rows.append({
                "tau": float(tau), "n": int(n), "stochastic": med["stochastic_raw"],
                "approx": med["approximation"], "varrho": reps[0].varrho,
                "exact_tv": med["exact_tv"], "assembled": med["assembled"],
            })
    return rows


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in SWEEP_COLUMNS})
    return buf.getvalue()
