import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from discrete_flow.bounds import (SWEEP_COLUMNS, BoundReport, assemble_overall, coupling_probability,
                                  early_stopping_bound, exact_early_stopping_tv, model_marginal,
                                  pinsker_chain, sweep, sweep_csv, train_and_bound)
from discrete_flow.core import (DenseDistribution, Schedule, StateSpace, make_uniform, point_mass,
                                random_distribution, total_variation)
from discrete_flow.ctmc import RngStream
from discrete_flow.exceptions import DomainError, SingularityError
from discrete_flow.paths import MixturePath, OracleRate, TargetModel
from discrete_flow.train import LossReport, fit_tabular, generate_dataset

LINEAR = Schedule("linear")
SCHEDULES = [LINEAR, Schedule("polynomial", 2.0), Schedule("cosine")]


# -- early-stopping term ---------------------------------------------------------------

def test_varrho_examples():
    assert early_stopping_bound(LINEAR, StateSpace(2, 1), 0.1) == pytest.approx(0.05, abs=1e-15)
    assert early_stopping_bound(LINEAR, StateSpace(2, 10), 0.01) == pytest.approx(0.04888987, abs=1e-8)
    small = [early_stopping_bound(LINEAR, StateSpace(3, 4), t) for t in (1e-2, 1e-3, 1e-4, 1e-5)]
    assert all(a > b for a, b in zip(small, small[1:])) and small[-1] < 1e-4


def test_varrho_rejects_bad_tau():
    with pytest.raises(SingularityError):
        early_stopping_bound(LINEAR, StateSpace(2, 2), 1e-7)
    with pytest.raises(DomainError):
        early_stopping_bound(LINEAR, StateSpace(2, 2), 0.6)


@given(st.integers(2, 6), st.integers(1, 8), st.floats(1e-6, 0.5, exclude_max=True), st.sampled_from(SCHEDULES))
def test_varrho_matches_coupling_form(S, D, tau, sched):
    sp = StateSpace(S, D)
    assert early_stopping_bound(sched, sp, tau) == pytest.approx(coupling_probability(sched, sp, tau),
                                                                 abs=1e-12)


@given(st.integers(2, 6), st.integers(1, 8), st.floats(1e-6, 0.49), st.sampled_from(SCHEDULES))
def test_varrho_monotone_in_dim_and_tau(S, D, tau, sched):
    f = early_stopping_bound
    assert f(sched, StateSpace(S, D + 1), tau) >= f(sched, StateSpace(S, D), tau)
    assert f(sched, StateSpace(S, D), min(0.4999, tau * 1.01)) >= f(sched, StateSpace(S, D), tau)
    assert 0.0 <= f(sched, StateSpace(S, D), tau) <= 1.0


@pytest.mark.parametrize("S,D", [(2, 1), (2, 3), (3, 2), (4, 2)])
@pytest.mark.parametrize("sched", SCHEDULES, ids=lambda s: s.kind)
def test_point_mass_target_attains_varrho(S, D, sched):
    sp = StateSpace(S, D)
    path = MixturePath(sp, sched)
    for tau in (0.01, 0.1, 0.3):
        tv, coupling = exact_early_stopping_tv(path, TargetModel(point_mass(sp, sp.n_states - 1)), tau)
        rho = early_stopping_bound(sched, sp, tau)
        assert tv == pytest.approx(rho, abs=1e-12)
        assert coupling == pytest.approx(rho, abs=1e-12)


def test_uniform_target_has_zero_early_stopping_tv():
    sp = StateSpace(3, 3)
    tv, _ = exact_early_stopping_tv(MixturePath(sp), TargetModel(make_uniform(sp)), 0.2)
    assert tv == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("S,D", [(2, 2), (3, 2), (2, 4)])
def test_random_targets_within_varrho(S, D):
    sp = StateSpace(S, D)
    g = np.random.default_rng(31)
    for _ in range(50):
        p1 = random_distribution(sp, g, alpha=0.3)
        for sched in SCHEDULES:
            for tau in (0.01, 0.05, 0.2):
                tv, _ = exact_early_stopping_tv(MixturePath(sp, sched), TargetModel(p1), tau)
                assert tv <= early_stopping_bound(sched, sp, tau) + 1e-12


def test_early_stopping_requires_uniform_source():
    sp = StateSpace(2, 2)
    path = MixturePath(sp, LINEAR, source=[0.3, 0.7])
    with pytest.raises(DomainError):
        exact_early_stopping_tv(path, TargetModel(make_uniform(sp)), 0.1)


# -- assembled bound -------------------------------------------------------------------

SP = StateSpace(2, 2)
SKEWED = TargetModel(DenseDistribution(SP, [0.4, 0.3, 0.2, 0.1]))


def test_model_marginal_of_oracle_is_exact_marginal():
    path = MixturePath(SP)
    p_hat = model_marginal(OracleRate(path, SKEWED), path, 0.05)
    tv, _ = exact_early_stopping_tv(path, SKEWED, 0.05)
    assert total_variation(SKEWED.p1, p_hat) == pytest.approx(tv, abs=1e-9)


def test_assemble_oracle_model_reduces_to_varrho():
    path = MixturePath(SP)
    tau = 0.05
    oracle = OracleRate(path, SKEWED)
    zero = LossReport(empirical=0.0, population=0.0, oracle=0.0, stochastic=0.0, approximation=0.0,
                      excess=0.0, n_samples=0, n_empty_cells=0)
    out = assemble_overall(zero, oracle, path, SKEWED, tau)
    assert out.assembled == out.varrho
    assert out.exact_tv == pytest.approx(out.exact_tv_p1, abs=1e-9)
    assert out.holds


@pytest.mark.parametrize("seed", range(5))
def test_assembled_bound_holds_for_trained_models(seed):
    path = MixturePath(SP)
    rep = train_and_bound(path, SKEWED, 0.05, 2000, seed, 8, (1e-3, 20.0))
    assert isinstance(rep, BoundReport)
    assert rep.assembled == pytest.approx(math.sqrt(rep.stochastic / 2) + math.sqrt(rep.approximation)
                                          + rep.varrho)
    assert rep.stochastic >= 0 and rep.stochastic_floored == (rep.stochastic_raw < 0)
    assert rep.holds
    obj = rep.to_json()
    assert obj["holds"] is True and obj["schema_version"] == 1


def test_bound_report_holds_flag():
    base = dict(tau=0.1, n=10, varrho=0.1, coupling_prob=0.1, exact_tv_p1=0.05, stochastic_raw=0.0,
                stochastic=0.0, approximation=0.0, stochastic_floored=False)
    assert BoundReport(**base, assembled=0.1, exact_tv=0.1).holds
    assert not BoundReport(**base, assembled=0.1, exact_tv=0.2).holds


@pytest.mark.parametrize("seed", range(3))
def test_pinsker_chain(seed):
    path = MixturePath(SP)
    data = generate_dataset(path, SKEWED, 0.05, 3000, RngStream(33, seed))
    model = fit_tabular(data, path, 4, (1e-3, 20.0))
    tv, bound = pinsker_chain(model, path, SKEWED, 0.05)
    assert tv <= bound + 1e-8


# -- sweeps ----------------------------------------------------------------------------

def test_tau_sweep_trades_early_stopping_against_estimation():
    path = MixturePath(SP)
    rows = sweep(path, SKEWED, [0.01, 0.05, 0.2], [2000], [0, 1, 2], 8, (1e-3, 20.0))
    varrho = [r["varrho"] for r in rows]
    assert varrho[0] < varrho[1] < varrho[2]
    assert all(r["assembled"] >= r["exact_tv"] for r in rows)


def test_sweep_csv_columns_and_values():
    path = MixturePath(SP)
    rows = sweep(path, SKEWED, [0.05], [200, 2000], [0, 1], 4, (1e-3, 20.0))
    text = sweep_csv(rows)
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert tuple(parsed[0]) == SWEEP_COLUMNS
    assert [int(r["n"]) for r in parsed] == [200, 2000]
    for r, row in zip(parsed, rows):
        assert float(r["assembled"]) == row["assembled"]


def test_sweep_is_reproducible_and_rejects_empty():
    path = MixturePath(SP)
    a = sweep_csv(sweep(path, SKEWED, [0.1], [300], [4], 4, (1e-3, 20.0)))
    b = sweep_csv(sweep(path, SKEWED, [0.1], [300], [4], 4, (1e-3, 20.0)))
    assert a == b
    with pytest.raises(DomainError):
        sweep(path, SKEWED, [], [300], [0], 4, (1e-3, 20.0))
