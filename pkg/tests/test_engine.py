import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import check_identities, fixed_spec, uniform_spec
from stratsplit.engine import (
    EmptyInitialSample,
    LevelSchedule,
    Orientation,
    RunConfig,
    StallError,
    ZeroSurvivors,
    ZeroTruth,
    aggregate,
    derive_rng,
    merge_levels,
    percent_error,
    pilot_levels,
    pilot_run,
    replicate,
    replicate_to_re,
    run_issa,
    run_ssa,
    split_allocation,
    stratum_estimates,
)
from stratsplit.models.wcm import WcmInstance, wcm_levels, wcm_spec, wcm_tail


# --- allocation ---------------------------------------------------------


def test_split_allocation_examples():
    rng = np.random.default_rng(0)
    assert sorted(split_allocation(3, 10, rng)) == [3, 3, 4]
    assert list(split_allocation(5, 5, rng)) == [1] * 5
    assert sorted(split_allocation(4, 10, rng)) == [2, 2, 3, 3]


def test_split_allocation_rejects_empty():
    with pytest.raises(ZeroSurvivors):
        split_allocation(0, 10, np.random.default_rng(0))


@given(st.integers(1, 200), st.integers(1, 2000), st.integers(0, 2**32 - 1))
def test_split_allocation_sums_to_N(size_Y, N, seed):
    m = split_allocation(size_Y, N, np.random.default_rng(seed))
    base = N // size_Y
    assert m.sum() == N
    assert set(np.unique(m)) <= {base, base + 1}
    assert (m == base + 1).sum() == N % size_Y


def test_split_allocation_extra_is_uniform():
    rng = np.random.default_rng(1)
    hits = np.zeros(4)
    for _ in range(20000):
        hits += split_allocation(4, 5, rng) == 2
    assert np.allclose(hits / 20000, 0.25, atol=0.015)


# --- per-stratum formulas -------------------------------------------------


def test_stratum_estimates_examples():
    H, P, C, empty = stratum_estimates([2, 4], [1, 0.5])
    assert (H, P, C, empty) == (3.0, 0.5, 1.5, False)
    _, P, _, _ = stratum_estimates([1.0], [1, 0.5, 0.4])
    assert P == pytest.approx(0.3, abs=1e-15)
    H, P, C, empty = stratum_estimates([], [1, 0.5])
    assert H == 0.0 and C == 0.0 and empty


def test_stratum_estimates_validates_ratios():
    with pytest.raises(ValueError):
        stratum_estimates([1.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        stratum_estimates([1.0], [1.0, 1.5])


def test_percent_error():
    assert percent_error(103, 100) == pytest.approx(3)
    assert percent_error(100, 100) == 0
    assert percent_error(44100 * 0.97, 44100) == pytest.approx(-3)
    with pytest.raises(ZeroTruth):
        percent_error(1.0, 0.0)


def test_aggregate_examples():
    agg = aggregate([9, 10, 11])
    assert agg.mean == 10
    assert agg.re == pytest.approx(1 / (10 * math.sqrt(3)))
    assert math.isnan(aggregate([5.0]).re)
    assert aggregate([0.0, 0.0]).re == math.inf


# --- schedules ------------------------------------------------------------


def test_schedule_must_be_monotone():
    with pytest.raises(ValueError):
        LevelSchedule((0.0, 0.0, math.inf))
    with pytest.raises(ValueError):
        LevelSchedule((3.0, 4.0), Orientation.SUB)
    s = LevelSchedule((4.0, 3.0, -math.inf), Orientation.SUB)
    assert s.n == 2
    assert list(s.inside(1, [2.0, 3.0, 3.5])) == [True, True, False]


def test_merge_levels_examples():
    assert merge_levels([3, 9], [5, 7]) == [3, 5, 7, 9]
    assert merge_levels([3, 9], [5, 7], Orientation.SUB) == [9, 7, 5, 3]


# --- single runs ----------------------------------------------------------


def test_constant_integrand_is_exact():
    spec = uniform_spec(lambda x: np.full(len(x), 7.0))
    levels = LevelSchedule((0.0, 0.5, math.inf))
    run = run_ssa(spec, levels, RunConfig(N=200, burn_in=1), seed=3)
    assert all(r.size_Z > 0 for r in run.strata)
    assert run.strata[-1].R_hat == 0.0
    assert run.estimate == pytest.approx(7.0, abs=1e-13)


def test_run_is_deterministic(uniform, uniform_levels):
    cfg = RunConfig(N=100, burn_in=2)
    assert run_ssa(uniform, uniform_levels, cfg, 5) == run_ssa(uniform, uniform_levels, cfg, 5)


def test_scale_equivariance(uniform_levels):
    base = uniform_spec()
    scaled = base.with_integrand(lambda x: 2.5 * x[:, 0] ** 2)
    cfg = RunConfig(N=300, burn_in=1)
    a = run_ssa(base, uniform_levels, cfg, 11)
    b = run_ssa(scaled, uniform_levels, cfg, 11)
    assert b.estimate == pytest.approx(2.5 * a.estimate, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(0, 10**9))
def test_run_identities_hold(N, seed):
    levels = LevelSchedule((0.0, 0.2, 0.5, 0.9, math.inf))
    run = run_ssa(uniform_spec(), levels, RunConfig(N=N, burn_in=1), seed)
    check_identities(run)
    assert len(run.log_level_products) == levels.n


def test_unreachable_level_is_flagged():
    levels = LevelSchedule((0.0, 0.5, 2.0, 3.0, math.inf))
    run = run_ssa(uniform_spec(), levels, RunConfig(N=50, burn_in=1), 0)
    check_identities(run)
    # X_3 = {x >= 2} is empty, so strata 3 and 4 carry nothing
    assert run.strata[1].R_hat == 0.0
    assert run.strata[2].size_X == 0 and run.strata[3].size_X == 0
    assert run.strata[2].P_hat == 0.0 and run.strata[3].C_hat == 0.0
    assert run.degenerate_flags[2] and run.extinct
    assert run.log_level_products[1] == -math.inf


def test_empty_initial_sample():
    with pytest.raises(EmptyInitialSample):
        RunConfig(N=0)


def test_orientation_mismatch_rejected(uniform):
    with pytest.raises(ValueError):
        run_ssa(uniform, LevelSchedule((1.0, 0.0), Orientation.SUB), RunConfig(N=10))


def test_uniform_model_is_unbiased(uniform, uniform_levels):
    # E[X^2] = 1/3 for X ~ U(0, 1)
    cfg = RunConfig(N=50, burn_in=1, replications=2000, seed=8)
    agg = replicate(uniform, uniform_levels, cfg)
    assert abs(agg.mean - 1 / 3) <= 4 * agg.std_error


def test_wcm_tail_mean_over_500_runs():
    inst = WcmInstance([1, 1, 2], 1)
    agg = wcm_tail(inst, RunConfig(N=100, burn_in=10, replications=500, seed=21))
    assert abs(agg.mean - 0.375) <= 3 * agg.std_error


# --- ISSA -----------------------------------------------------------------


def test_issa_single_level_matches_ssa(uniform):
    levels = LevelSchedule((0.0, math.inf))
    cfg = RunConfig(N=40, burn_in=1)
    assert run_issa(uniform, levels, cfg, 4).estimate == run_ssa(uniform, levels, cfg, 4).estimate


def test_issa_constant_integrand_exact():
    spec = uniform_spec(lambda x: np.full(len(x), 3.0))
    levels = LevelSchedule((0.0, 0.5, math.inf))
    run = run_issa(spec, levels, RunConfig(N=30, burn_in=1, mode="issa"), 2)
    assert run.estimate == pytest.approx(3.0, abs=1e-13)


def test_issa_wcm_is_unbiased():
    inst = WcmInstance([1, 1, 2], 1)
    cfg = RunConfig(N=10, burn_in=5, replications=400, seed=5, mode="issa", issa_inner=4)
    agg = wcm_tail(inst, cfg)
    assert abs(agg.mean - 0.375) <= 4 * agg.std_error
    for run in agg.runs:
        check_identities(run)


# --- replication ----------------------------------------------------------


def test_replicate_independent_of_threads(uniform, uniform_levels):
    a = replicate(uniform, uniform_levels, RunConfig(N=60, burn_in=1, replications=8, seed=4))
    b = replicate(uniform, uniform_levels, RunConfig(N=60, burn_in=1, replications=8, seed=4, threads=3))
    assert a.per_run.tobytes() == b.per_run.tobytes()
    assert a.runs == b.runs


def test_replication_streams_are_positional():
    a = derive_rng(7, 1, 3).random(4)
    b = derive_rng(7, 1, 3).random(4)
    c = derive_rng(7, 1, 4).random(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_replicate_to_re_reaches_target(uniform, uniform_levels):
    agg = replicate_to_re(uniform, uniform_levels, RunConfig(N=50, burn_in=1), 0.01, min_reps=10)
    assert agg.re <= 0.01
    assert agg.R == len(agg.runs)


def test_prefix_runs_count_towards_R(uniform, uniform_levels):
    cfg = RunConfig(N=30, burn_in=1, replications=4)
    extra = run_ssa(uniform, uniform_levels, cfg, 99)
    agg = replicate(uniform, uniform_levels, cfg, prefix_runs=(extra,))
    assert agg.R == 4 and agg.per_run[0] == extra.estimate


# --- pilot ----------------------------------------------------------------


def test_pilot_top_two_rule():
    spec = fixed_spec(np.arange(1, 11))
    levels = pilot_levels(spec, RunConfig(N=10, rho=0.2, burn_in=1))
    assert levels.thresholds[:2] == (-math.inf, 9.0)
    assert levels.thresholds[-1] == math.inf


def test_pilot_inserts_mandatory_levels():
    spec = fixed_spec(np.arange(1, 11))
    levels = pilot_levels(spec, RunConfig(N=10, rho=0.2, burn_in=1), mandatory=(5, 7))
    g = levels.thresholds
    assert 5.0 in g and 7.0 in g
    assert list(g) == sorted(g)


def test_pilot_stall_keeps_partial_schedule():
    spec = fixed_spec(np.arange(1, 11))
    with pytest.raises(StallError) as err:
        pilot_run(spec, RunConfig(N=10, rho=0.2, burn_in=1), terminal=20.0)
    assert 10.0 in err.value.schedule.thresholds
    assert err.value.run.levels == err.value.schedule


def test_pilot_then_fixed_runs(uniform):
    cfg = RunConfig(N=200, burn_in=1, rho=0.3, replications=300, seed=6)
    levels = pilot_levels(uniform, cfg, start=0.0, terminal=0.99)
    assert levels.thresholds[0] == 0.0 and levels.thresholds[-2] == 0.99
    agg = replicate(uniform, levels, cfg)
    assert abs(agg.mean - 1 / 3) <= 4 * agg.std_error


def test_pilot_sub_orientation():
    inst = WcmInstance([1, 1, 2, 3], 2)
    top = wcm_levels(inst).thresholds[0]
    spec = wcm_spec(inst, top)
    levels = pilot_levels(spec, RunConfig(N=200, burn_in=5, rho=0.3), start=top, terminal=2.0)
    assert levels.orientation is Orientation.SUB
    assert levels.thresholds[0] == top and levels.thresholds[-2] == 2.0
