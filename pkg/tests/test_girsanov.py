import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from discrete_flow.core import StateSpace, make_uniform, random_distribution
from discrete_flow.ctmc import RngStream, Trajectory, simulate_batch
from discrete_flow.exceptions import AbsoluteContinuityError, DomainError
from discrete_flow.girsanov import (RnAccumulator, bregman, bregman_array, data_processing_check,
                                    martingale_check, path_kl_exact, path_kl_mc, rn_log_weight,
                                    rn_log_weights)
from discrete_flow.paths import MixturePath, OracleRate, TargetModel
from discrete_flow.rates import ConstantRate, PolynomialRate, ZeroRate
from discrete_flow.train import fit_tabular, generate_dataset

SP1 = StateSpace(2, 1)


def flip(rate):
    return ConstantRate.uniform(SP1, rate)


# -- Bregman -------------------------------------------------------------------

def test_bregman_examples():
    assert bregman(1.7, 1.7) == 0.0
    assert bregman(1.0, 2.0) == pytest.approx(1 - math.log(2), abs=1e-15)
    assert bregman(1.0, 2.0) == pytest.approx(0.30685, abs=1e-5)
    assert bregman(0.0, 2.0) == 2.0
    for b in (0.0, -1.0):
        with pytest.raises(DomainError):
            bregman(1.0, b)


def test_bregman_array_conventions():
    out = bregman_array([0.0, 1.0, 2.0, 0.0], [0.0, 0.0, 1.0, 3.0])
    assert out[0] == 0.0 and math.isinf(out[1]) and out[3] == 3.0
    assert out[2] == pytest.approx(2 * math.log(2) - 1)


@given(st.floats(0.0, 50.0), st.floats(1e-6, 50.0))
def test_bregman_nonnegative(a, b):
    v = bregman(a, b)
    assert v >= -1e-12 * max(1.0, a, b)
    assert bregman_array([a], [b])[0] == pytest.approx(v, rel=1e-12, abs=1e-12)


# -- RN weights ------------------------------------------------------------------

def test_rn_weight_identical_rates_is_zero():
    tr = Trajectory(SP1, 0.0, 0, [0.3, 0.6], [1, 0], 1.0)
    assert rn_log_weight(tr, flip(1.5), flip(1.5)) == 0.0


def test_rn_weight_no_jump_and_one_jump():
    none = Trajectory(SP1, 0.0, 0, [], [], 1.0)
    one = Trajectory(SP1, 0.0, 0, [0.4], [1], 1.0)
    assert rn_log_weight(none, flip(1.0), flip(2.0)) == pytest.approx(-1.0, abs=1e-14)
    assert rn_log_weight(one, flip(1.0), flip(2.0)) == pytest.approx(-1.0 + math.log(2), abs=1e-14)


def test_rn_weight_quad_floor():
    tr = Trajectory(SP1, 0.0, 0, [], [], 1.0)
    with pytest.raises(DomainError):
        rn_log_weight(tr, flip(1.0), flip(2.0), quad_steps=8)


def test_rn_weight_hypothesis_violation():
    tr = Trajectory(SP1, 0.0, 0, [], [], 1.0)
    with pytest.raises(AbsoluteContinuityError):
        rn_log_weight(tr, ZeroRate(SP1), flip(1.0))


def test_accumulator_flag_trips_on_forbidden_jump():
    acc = RnAccumulator()
    assert acc.log_weight == 0.0 and acc.absolutely_continuous
    acc.add_drift(-0.5)
    acc.add_jump(2.0, 1.0)
    assert acc.log_weight == pytest.approx(-0.5 - math.log(2))
    acc.add_jump(1.0, 0.0)
    assert not acc.absolutely_continuous and acc.log_weight == -math.inf


def test_batch_weights_match_single_trajectory(rng):
    sp = StateSpace(3, 2)
    ux = PolynomialRate.random(sp, rng, degree=2)
    uy = PolynomialRate.random(sp, rng, degree=2)
    batch = simulate_batch(ux, np.arange(9), 0.0, 1.0, RngStream(3).generator())
    w = rn_log_weights(batch, ux, uy)
    for i in range(9):
        assert w[i] == pytest.approx(rn_log_weight(batch.trajectory(i), ux, uy), abs=1e-12)


def test_time_varying_drift_integral(rng):
    sp = StateSpace(2, 1)
    ux = PolynomialRate(sp, np.array([[[[0, 1.0]]], [[[0, 2.0]]], [[[0, 3.0]]]]).repeat(2, axis=1)
                        .reshape(3, 2, 1, 2))
    tr = Trajectory(sp, 0.0, 0, [], [], 1.0)
    w = rn_log_weight(tr, ux, ConstantRate.uniform(sp, 0.5))
    # drift = int_0^1 (1 + 2t + 3t^2) dt - 0.5; end nodes sit a relative 1e-12 inside the segment
    assert w == pytest.approx(2.5, abs=1e-10)


# -- path KL -----------------------------------------------------------------------

def test_path_kl_identical_rates():
    est = path_kl_mc(flip(1.0), flip(1.0), make_uniform(SP1), 1.0, 1000, RngStream(1))
    assert est.estimate == 0.0 and est.std_err == 0.0
    assert path_kl_exact(flip(1.0), flip(1.0), make_uniform(SP1), 1.0) == 0.0
    assert json.loads(json.dumps(est.to_json())) == {"estimate": 0.0, "std_err": 0.0, "n": 1000}


@pytest.mark.parametrize("a, b", [(1.0, 2.0), (2.0, 1.0)])
def test_path_kl_constant_rates_closed_form(a, b):
    exact = a * math.log(a / b) - a + b
    assert path_kl_exact(flip(a), flip(b), make_uniform(SP1), 1.0) == pytest.approx(exact, abs=1e-14)
    est = path_kl_mc(flip(a), flip(b), make_uniform(SP1), 1.0, 100_000, RngStream(2, int(a)))
    assert abs(est.estimate - exact) <= 3 * est.std_err


def test_path_kl_random_pairs_mc_vs_quadrature():
    sp = StateSpace(2, 2)
    g = np.random.default_rng(77)
    for k in range(10):
        ux = PolynomialRate.random(sp, g, degree=2)
        uy = PolynomialRate.random(sp, g, degree=2)
        p0 = random_distribution(sp, g)
        exact = path_kl_exact(ux, uy, p0, 1.0)
        est = path_kl_mc(ux, uy, p0, 1.0, 20_000, RngStream(100, k))
        assert exact >= 0
        assert abs(est.estimate - exact) <= 3 * est.std_err, (k, est, exact)


def test_path_kl_infinite_bregman_raises():
    with pytest.raises(AbsoluteContinuityError):
        path_kl_exact(flip(1.0), ZeroRate(SP1), make_uniform(SP1), 1.0)


def test_path_kl_zero_iff_rates_agree_on_reachable_states():
    sp = StateSpace(2, 1)
    # rates differ only out of state 1, which is never reached from a point mass at 0 under zero flow
    tab_x = np.zeros((2, 1, 2))
    tab_y = np.zeros((2, 1, 2))
    tab_y[1, 0, 0] = 5.0
    from discrete_flow.core import point_mass
    assert path_kl_exact(ConstantRate(sp, tab_x), ConstantRate(sp, tab_y), point_mass(sp, 0), 1.0) == 0.0
    tab_y[0, 0, 1] = 0.1
    assert path_kl_exact(ConstantRate(sp, tab_x), ConstantRate(sp, tab_y), point_mass(sp, 0), 1.0) > 0.0


# -- martingale ----------------------------------------------------------------------

def test_martingale_identical_rates_exact():
    est = martingale_check(flip(1.0), flip(1.0), make_uniform(SP1), 1.0, 1000, RngStream(1))
    assert est.estimate == 1.0 and est.std_err == 0.0


@pytest.mark.parametrize("a, b", [(1.0, 2.0), (2.0, 0.5)])
def test_martingale_mean_one(a, b):
    est = martingale_check(flip(a), flip(b), make_uniform(SP1), 1.0, 100_000, RngStream(3, int(10 * b)))
    assert abs(est.estimate - 1.0) <= 4 * est.std_err
    assert est.overflow == 0


def test_mc_is_independent_of_thread_count():
    sp = StateSpace(2, 2)
    g = np.random.default_rng(4)
    ux, uy = PolynomialRate.random(sp, g), PolynomialRate.random(sp, g)
    a = path_kl_mc(ux, uy, make_uniform(sp), 1.0, 120_000, RngStream(8), n_jobs=1)
    b = path_kl_mc(ux, uy, make_uniform(sp), 1.0, 120_000, RngStream(8), n_jobs=3)
    assert a == b


# -- data processing -----------------------------------------------------------------

def test_data_processing_identical():
    dp = data_processing_check(flip(1.0), flip(1.0), make_uniform(SP1), 1.0)
    assert dp.marginal_kl == 0.0 and dp.path_kl == 0.0 and dp.holds


def test_data_processing_stationary_uniform():
    dp = data_processing_check(flip(1.0), flip(2.0), make_uniform(SP1), 1.0)
    assert dp.marginal_kl == pytest.approx(0.0, abs=1e-15)
    assert dp.path_kl == pytest.approx(1 - math.log(2), abs=1e-14)
    assert dp.holds


def test_data_processing_oracle_vs_trained(rng):
    sp = StateSpace(3, 2)
    path = MixturePath(sp)
    target = TargetModel(random_distribution(sp, rng))
    tau = 0.05
    data = generate_dataset(path, target, tau, 2000, RngStream(6))
    model = fit_tabular(data, path, 8, (1e-3, 1 / tau))
    dp = data_processing_check(OracleRate(path, target), model, path.source_distribution(), 1 - tau)
    assert dp.holds and dp.path_kl > 0


@given(st.integers(0, 2**32 - 1))
def test_data_processing_random_pairs(seed):
    sp = StateSpace(2, 2)
    g = np.random.default_rng(seed)
    ux, uy = PolynomialRate.random(sp, g), PolynomialRate.random(sp, g)
    dp = data_processing_check(ux, uy, random_distribution(sp, g), 1.0, steps=256, quad_steps=65)
    assert dp.path_kl >= 0
    assert dp.holds
