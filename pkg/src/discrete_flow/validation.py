"""Invariant checks run by the ``validate`` command.

Every check reports the measured value next to the threshold it is held to.
Monte Carlo checks use standard-error multiples; exact checks use absolute
tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import early_stopping_bound, exact_early_stopping_tv
from .config import ExperimentConfig
from .core import total_variation
from .ctmc import (RngStream, build_partition, draw_initial, empirical_distribution,
                   forward_integrate, jump_count, kolmogorov_rhs, marginal_path, simulate_batch,
                   uniformization_samples)
from .girsanov import data_processing_check, martingale_check, path_kl_exact, path_kl_mc
from .paths import ConditionalRate, OracleRate, marginal, time_grid
from .rates import ConstantRate
from .train import decompose_error, fit_tabular, generate_dataset

GRID = 129
DECOMPOSITION_SEEDS = 20


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    threshold: float

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value, "threshold": self.threshold}


def _le(name: str, value: float, threshold: float) -> Check:
    return Check(name, bool(value <= threshold), float(value), float(threshold))


def forward_residual_conditional(cfg: ExperimentConfig) -> Check:
    """max |d/dt p_{t|1} - G_t p_{t|1}| for the conditional rate toward every x_1."""
    path, sp = cfg.path, cfg.space
    worst = 0.0
    for x1 in range(sp.n_states):
        rate = ConditionalRate(path, x1)
        for t in time_grid(cfg.tau, GRID):
            p = path.conditional_matrix(t, [x1])[:, 0]
            dp = path.conditional_derivative(t, [x1])[:, 0]
            worst = max(worst, float(np.max(np.abs(dp - kolmogorov_rhs(rate, t, p)))))
    return _le("forward_residual_conditional", worst, 1e-8)


def forward_residual_oracle(cfg: ExperimentConfig) -> Check:
    """max |p_hat_t - p_t| where p_hat solves the forward equation under the oracle."""
    path, target = cfg.path, cfg.target_model()
    grid = time_grid(cfg.tau, GRID)
    probs = marginal_path(OracleRate(path, target), path.source_distribution(), grid)
    exact = np.array([marginal(path, target, t).mass for t in grid])
    return _le("forward_residual_oracle", float(np.max(np.abs(probs - exact))), 1e-6)


def sampler_agreement(cfg: ExperimentConfig) -> Check:
    """TV(uniformization samples, forward-integrated marginal) within 3 sqrt(N / 4n)."""
    path, target = cfg.path, cfg.target_model()
    oracle = OracleRate(path, target)
    part = build_partition(oracle, cfg.tau, cfg.n_intervals)
    n = cfg.n_trajectories
    y = uniformization_samples(oracle, path.source_distribution(), part, RngStream(cfg.seed, 11), n)
    ref = forward_integrate(oracle, path.source_distribution(), 0.0, 1.0 - cfg.tau)
    tv = total_variation(empirical_distribution(cfg.space, y), ref)
    return _le("sampler_agreement", tv, 3.0 * math.sqrt(cfg.space.n_states / (4.0 * n)))


def _constant_pair(cfg: ExperimentConfig):
    return ConstantRate.uniform(cfg.space, 1.0), ConstantRate.uniform(cfg.space, 2.0)


def girsanov_identity(cfg: ExperimentConfig, n_jobs: int = 1) -> Check:
    """|MC E[-W] - Bregman quadrature| in standard errors, constant rates a = 1, b = 2."""
    ux, uy = _constant_pair(cfg)
    p0 = cfg.path.source_distribution()
    mc = path_kl_mc(ux, uy, p0, 1.0, cfg.n_trajectories, RngStream(cfg.seed, 12), n_jobs=n_jobs)
    exact = path_kl_exact(ux, uy, p0, 1.0)
    return _le("girsanov_identity", abs(mc.estimate - exact) / max(mc.std_err, 1e-300), 3.0)


def martingale(cfg: ExperimentConfig, n_jobs: int = 1) -> Check:
    """|mean exp(W) - 1| in standard errors."""
    ux, uy = _constant_pair(cfg)
    est = martingale_check(ux, uy, cfg.path.source_distribution(), 1.0, cfg.n_trajectories,
                           RngStream(cfg.seed, 13), n_jobs=n_jobs)
    return _le("martingale", abs(est.estimate - 1.0) / max(est.std_err, 1e-300), 4.0)


def compensator(cfg: ExperimentConfig) -> Check:
    """Mean jump count on [0, 1] against the integrated outflow r D (|S| - 1)."""
    sp = cfg.space
    rate = ConstantRate.uniform(sp, 0.7)
    gen = RngStream(cfg.seed, 14).generator()
    batch = simulate_batch(rate, draw_initial(cfg.path.source_distribution(), cfg.n_trajectories, gen),
                           0.0, 1.0, gen)
    counts = jump_count(batch, (0.0, 1.0)).astype(float)
    expected = 0.7 * sp.dim * (sp.vocab_size - 1)
    se = counts.std(ddof=1) / math.sqrt(len(counts))
    return _le("compensator", abs(counts.mean() - expected) / se, 4.0)


def exit_time(cfg: ExperimentConfig) -> Check:
    """P(no jump by h) against exp(-outflow h)."""
    sp = cfg.space
    rate = ConstantRate.uniform(sp, 0.7)
    h = 0.5
    gen = RngStream(cfg.seed, 15).generator()
    batch = simulate_batch(rate, np.zeros(cfg.n_trajectories, dtype=np.int64), 0.0, h, gen)
    survive = (batch.n_jumps == 0).astype(float)
    p = math.exp(-0.7 * sp.dim * (sp.vocab_size - 1) * h)
    se = math.sqrt(p * (1 - p) / len(survive))
    return _le("exit_time", abs(survive.mean() - p) / se, 4.0)


def decomposition(cfg: ExperimentConfig) -> Check:
    """Seed-batch mean of [stochastic + 2 approx - excess]; must be >= 0."""
    path, target = cfg.path, cfg.target_model()
    slack = []
    for s in range(DECOMPOSITION_SEEDS):
        data = generate_dataset(path, target, cfg.tau, cfg.n_samples, RngStream(cfg.seed, 100 + s))
        model = fit_tabular(data, path, cfg.n_time_bins, cfg.clamp)
        r = decompose_error(model, data, path, target, cfg.tau)
        slack.append(r.stochastic + 2.0 * r.approximation - r.excess)
    return _le("error_decomposition", -float(np.mean(slack)), 0.0)


def early_stopping(cfg: ExperimentConfig) -> Check:
    """TV(p_1, p_{1-tau}) <= varrho, and the coupling form equals varrho."""
    path = cfg.path
    tv, coupling = exact_early_stopping_tv(path, cfg.target_model(), cfg.tau)
    rho = early_stopping_bound(path.schedule, cfg.space, cfg.tau)
    gap = max(tv - rho, abs(coupling - rho))
    return _le("early_stopping", gap, 1e-12)


def data_processing(cfg: ExperimentConfig) -> Check:
    """Marginal KL <= path KL for oracle vs a model trained on this config."""
    path, target = cfg.path, cfg.target_model()
    data = generate_dataset(path, target, cfg.tau, cfg.n_samples, RngStream(cfg.seed, 16))
    model = fit_tabular(data, path, cfg.n_time_bins, cfg.clamp)
    dp = data_processing_check(OracleRate(path, target), model, path.source_distribution(), 1.0 - cfg.tau)
    return _le("data_processing", dp.marginal_kl - dp.path_kl, 1e-8)


SUITE = (
    forward_residual_conditional, forward_residual_oracle, sampler_agreement, girsanov_identity,
    martingale, compensator, exit_time, decomposition, early_stopping, data_processing,
)
_THREADED = {girsanov_identity, martingale}


def run_suite(cfg: ExperimentConfig, n_jobs: int = 1) -> list[Check]:
    return [fn(cfg, n_jobs) if fn in _THREADED else fn(cfg) for fn in SUITE]
