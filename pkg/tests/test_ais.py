import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aisampling.ais import (
    AisError,
    AisState,
    AllocationPolicy,
    StageWeights,
    compute_stage_weights,
    estimate_normalized,
    estimate_unnormalized,
    estimate_weighted,
    run_ais,
    run_ais_sample_scale,
    stage_weights_from_stats,
    step_sample,
)
from aisampling.densities import PolicyParams, TargetSpec
from aisampling.policy_update import MomentUpdater, RegularizationMode

STD_NORMAL = PolicyParams.gaussian([0.0], 1.0)


def _toy_setup(d=2):
    reg = RegularizationMode("sig_0", 5.0, 3.0)
    target = TargetSpec.gaussian(np.full(d, 5.0), 1.0)
    q0 = PolicyParams.student(np.zeros(d), reg.fixed_scale(d), 3.0)
    return target, q0, MomentUpdater(reg)


def test_step_sample_single_ratio():
    s = AisState(1, policy=STD_NORMAL)
    step_sample(s, [0.3], math.log(0.5), [1.0])
    assert s.sum_S[0] == 2.0 and s.count == 1
    assert estimate_unnormalized(s)[0] == 2.0


def test_step_sample_running_mean():
    s = AisState(1, policy=STD_NORMAL)
    step_sample(s, [0.0], 0.0, [2.0])
    step_sample(s, [0.0], 0.0, [4.0])
    assert estimate_unnormalized(s)[0] == 3.0


def test_nonfinite_integrand_names_point():
    s = AisState(1, policy=STD_NORMAL)
    with pytest.raises(AisError, match=r"1\.5"):
        step_sample(s, [1.5], 0.0, [np.nan])


def test_empty_state_errors():
    s = AisState(1, policy=STD_NORMAL)
    with pytest.raises(AisError):
        estimate_unnormalized(s)
    with pytest.raises(AisError):
        estimate_normalized(s)


def test_allocation_rejects_empty_stage():
    with pytest.raises(ValueError):
        AllocationPolicy((3, 0))
    assert AllocationPolicy.constant(3, 4).boundaries == [4, 8, 12]


def test_identity_updater_perfect_policy_gives_one():
    target = TargetSpec.from_policy(STD_NORMAL)
    trace = run_ais(lambda x: np.exp(STD_NORMAL.log_pdf(x)), target, STD_NORMAL, AllocationPolicy.constant(4, 25), None, np.random.default_rng(0))
    for e in trace.entries:
        assert np.all(estimate_unnormalized(e.state) == 1.0)


def test_phi_equal_q0_gives_one():
    q0 = PolicyParams.student([1.0], 2.0, 3.0)
    trace = run_ais(lambda x: np.exp(q0.log_pdf(x)), None, q0, AllocationPolicy((30,)), None, np.random.default_rng(1))
    assert estimate_unnormalized(trace.final_state)[0] == 1.0


def test_run_is_deterministic():
    target, q0, upd = _toy_setup()
    a = run_ais(lambda x: x, target, q0, AllocationPolicy.constant(5, 50), upd, np.random.default_rng(3))
    b = run_ais(lambda x: x, target, q0, AllocationPolicy.constant(5, 50), upd, np.random.default_rng(3))
    for x, y in zip(a.entries, b.entries):
        assert np.array_equal(x.state.sum_S, y.state.sum_S)
        assert np.array_equal(x.state.sum_num, y.state.sum_num)
        assert x.policy == y.policy


@pytest.mark.parametrize("sched", [(2, 3), (1, 1, 1, 1, 1), (7, 1, 12)])
@pytest.mark.parametrize("seed", range(5))
def test_stage_and_sample_scale_agree_bitwise(sched, seed):
    target, q0, upd = _toy_setup()
    a = run_ais(lambda x: x, target, q0, AllocationPolicy(sched), upd, np.random.default_rng(seed))
    b = run_ais_sample_scale(lambda x: x, target, q0, AllocationPolicy(sched), upd, np.random.default_rng(seed))
    assert a.budgets() == b.budgets() == AllocationPolicy(sched).boundaries
    for x, y in zip(a.entries, b.entries):
        assert np.array_equal(x.state.sum_S, y.state.sum_S)
        assert np.array_equal(x.state.sum_num, y.state.sum_num)


def test_record_budget_inside_stage_matches_boundary_run():
    target, q0, upd = _toy_setup()
    alloc = AllocationPolicy.constant(4, 100)
    a = run_ais(lambda x: x, target, q0, alloc, upd, np.random.default_rng(9), record_budgets=[150, 400])
    b = run_ais(lambda x: x, target, q0, alloc, upd, np.random.default_rng(9))
    assert a.budgets() == [150, 400]
    assert np.array_equal(a.final_state.sum_S, b.final_state.sum_S)
    assert a.at(150).state.count == 150


def test_count_matches_stage_sizes():
    target, q0, upd = _toy_setup()
    tr = run_ais(lambda x: x, target, q0, AllocationPolicy((3, 5, 2)), upd, np.random.default_rng(0))
    st_ = tr.final_state.stages()
    assert [s.size for s in st_] == [3, 5, 2]
    assert tr.final_state.count == 10


def _manual_state(log_w, phi):
    s = AisState(1, policy=STD_NORMAL)
    log_w = np.asarray(log_w, float)
    s.add_batch(np.zeros((len(log_w), 1)), np.zeros(len(log_w)), np.asarray(phi, float)[:, None], log_w)
    return s


def test_normalized_weighted_mean():
    s = _manual_state(np.log([1.0, 3.0]), [0.0, 4.0])
    assert estimate_normalized(s)[0] == pytest.approx(3.0, abs=1e-15)


def test_normalized_equal_weights_is_mean():
    s = _manual_state(np.full(4, 0.7), [1.0, 2.0, 3.0, 10.0])
    assert estimate_normalized(s)[0] == pytest.approx(4.0, rel=1e-14)


def test_normalized_zero_weights_error():
    s = _manual_state([-np.inf, -np.inf], [1.0, 2.0])
    with pytest.raises(AisError, match="zero"):
        estimate_normalized(s)


def test_normalized_invariance_and_equivariance():
    q0 = PolicyParams.student([0.0], 3.0, 3.0)
    alloc = AllocationPolicy((300,))
    base = run_ais(lambda x: x, TargetSpec.gaussian([1.0], 1.0), q0, alloc, None, np.random.default_rng(4))
    scaled = run_ais(lambda x: x, TargetSpec.gaussian([1.0], 1.0, log_scale=math.log(1e6)), q0, alloc, None, np.random.default_rng(4))
    shifted = run_ais(lambda x: x + 2.5, TargetSpec.gaussian([1.0], 1.0), q0, alloc, None, np.random.default_rng(4))
    e = estimate_normalized(base.final_state)
    np.testing.assert_allclose(estimate_normalized(scaled.final_state), e, rtol=1e-12)
    np.testing.assert_allclose(estimate_normalized(shifted.final_state), e + 2.5, rtol=1e-12)


def test_stage_weights_symmetric():
    for s in (1e-3, 1.0, 7.0, 1e8):
        np.testing.assert_allclose(stage_weights_from_stats([1, 1], [s, s]).alphas, [1.0, 1.0], rtol=1e-15)


def test_stage_weights_hand_example():
    np.testing.assert_allclose(stage_weights_from_stats([1, 1], [1.0, 3.0]).alphas, [1.5, 0.5], rtol=1e-15)


def test_perfect_stage_dominates_under_floor():
    a = stage_weights_from_stats([10, 10, 10], [0.0, 5.0, 1.0]).alphas
    assert np.all(np.isfinite(a)) and a.argmax() == 0
    assert a[0] > 1e9 * a[1]


@settings(max_examples=200, deadline=None)
@given(
    n=st.lists(st.integers(1, 10_000), min_size=1, max_size=60),
    logs=st.lists(st.floats(-40, 40), min_size=60, max_size=60),
)
def test_weight_constraint_property(n, logs):
    s = np.exp(np.asarray(logs[: len(n)]))
    a = stage_weights_from_stats(n, s).alphas
    assert np.all(a >= 0)
    assert abs(np.dot(n, a) - sum(n)) <= 1e-10 * sum(n)


def test_weighted_with_unit_alphas_is_normalized():
    target, q0, upd = _toy_setup()
    tr = run_ais(lambda x: x, target, q0, AllocationPolicy.constant(6, 50), upd, np.random.default_rng(2))
    stages = tr.final_state.stages()
    w = estimate_weighted(stages, StageWeights(np.ones(len(stages))))
    np.testing.assert_allclose(w, estimate_normalized(tr.final_state), rtol=1e-12)


def test_weighted_equal_stats_reduce_to_normalized():
    # identity policy and equal stage sizes: alphas from equal s_t are all one
    alphas = stage_weights_from_stats([50] * 4, [2.5] * 4).alphas
    np.testing.assert_allclose(alphas, 1.0, rtol=1e-15)


def test_weighted_garbage_stage_limit():
    target, q0, upd = _toy_setup()
    tr = run_ais(lambda x: x, target, q0, AllocationPolicy.constant(2, 200), upd, np.random.default_rng(5))
    st1, st2 = tr.final_state.stages()
    alphas = stage_weights_from_stats([st1.size, st2.size], [1.0, 1e300]).alphas
    expected = st1.numerator_sum / st1.denominator_sum
    np.testing.assert_allclose(estimate_weighted([st1, st2], StageWeights(alphas)), expected, rtol=1e-12)


def test_weight_var_stat_matches_direct_sum():
    rng = np.random.default_rng(0)
    s = AisState(1, policy=STD_NORMAL)
    lw = rng.normal(size=40)
    s.add_batch(np.zeros((40, 1)), np.zeros(40), np.ones((40, 1)), lw)
    rec = s.stages()[0]
    z = 1.7
    direct = np.sum((np.exp(lw) / z - 1.0) ** 2)
    assert rec.weight_var_stat(z) == pytest.approx(direct, rel=1e-10)


def test_weighted_defaults_use_plugin_constant():
    target, q0, upd = _toy_setup()
    tr = run_ais(lambda x: x, target, q0, AllocationPolicy.constant(5, 80), upd, np.random.default_rng(6))
    stages = tr.final_state.stages()
    z = sum(s.denominator_sum for s in stages) / sum(s.size for s in stages)
    np.testing.assert_array_equal(compute_stage_weights(stages).alphas, compute_stage_weights(stages, z).alphas)
    assert tr.final_state.count == sum(s.size for s in stages)


def test_unnormalized_unbiased_under_adaptation():
    # phi = x * pi with pi = N(5,1) in d=1: integral is 5
    reg = RegularizationMode("sig_0", 5.0, 3.0)
    target = TargetSpec.gaussian([5.0], 1.0)
    q0 = PolicyParams.student([0.0], reg.fixed_scale(1), 3.0)
    phi = lambda x: x * np.exp(target(x))[:, None]  # noqa: E731
    ests = []
    for r in range(400):
        tr = run_ais(phi, target, q0, AllocationPolicy.constant(4, 25), MomentUpdater(reg), np.random.default_rng(1000 + r))
        ests.append(estimate_unnormalized(tr.final_state)[0])
    ests = np.asarray(ests)
    se = ests.std(ddof=1) / math.sqrt(len(ests))
    assert abs(ests.mean() - 5.0) < 4 * se


def test_toy_config_error_decreases_with_stages():
    target, q0, upd = _toy_setup()
    first, last = [], []
    for r in range(10):
        tr = run_ais(lambda x: x, target, q0, AllocationPolicy.constant(20, 200), upd, np.random.default_rng(r))
        first.append(np.sum((estimate_normalized(tr.entries[0].state) - 5.0) ** 2))
        last.append(np.sum((estimate_normalized(tr.final_state) - 5.0) ** 2))
    assert np.median(last) < np.median(first) / 10
