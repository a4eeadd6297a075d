import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progdiff.allocation import (
    DifficultyProfile,
    FlopsBudget,
    difficulty_profile,
    eq14_limits,
    format_plan,
    group_limits,
    partition_timesteps,
    plan_groups,
    shaped_profile,
)
from progdiff.schedule import build_cosine_schedule, build_linear_schedule, snr_db_all

from . import oracles


def test_budget_validation():
    for k in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            FlopsBudget(k, 1.0)
    with pytest.raises(ValueError):
        FlopsBudget(0.5, 0.0)
    FlopsBudget(1.0, 3.0)


def test_profile_endpoints(cosine100):
    b = FlopsBudget(0.5, 1000.0)
    p = difficulty_profile(cosine100, b)
    snr = snr_db_all(cosine100)
    assert p.flops_target[np.argmax(snr)] == 500.0
    assert p.flops_target[np.argmin(snr)] == 1000.0


def test_profile_span_for_reference_model_cost():
    F = 8.14e9
    p = difficulty_profile(build_cosine_schedule(1000), FlopsBudget(0.5, F))
    assert p.flops_target.min() == pytest.approx(4.07e9, rel=1e-12)
    assert p.flops_target.max() == pytest.approx(8.14e9, rel=1e-12)


def test_profile_matches_oracle_t4():
    s = build_linear_schedule(4, 0.1, 0.4)
    p = difficulty_profile(s, FlopsBudget(0.3, 7.0))
    expected = oracles.flops_targets(oracles.linear_alpha_bars(4, 0.1, 0.4), 0.3, 7.0)
    np.testing.assert_allclose(p.flops_target, expected, rtol=1e-10)


def test_profile_standardized_values(cosine100):
    p = difficulty_profile(cosine100, FlopsBudget(0.5, 1.0))
    assert p.s_n.mean() == pytest.approx(0.0, abs=1e-12)
    assert p.s_n.std() == pytest.approx(1.0, rel=1e-12)


def test_profile_single_timestep():
    p = difficulty_profile(build_linear_schedule(1, 0.2, 0.2), FlopsBudget(0.25, 8.0))
    assert p.flops_target.tolist() == [2.0]


def test_limits_ten_groups():
    raw = eq14_limits(10, FlopsBudget(0.5, 1.0))
    np.testing.assert_allclose(raw, [0.50 + 0.05 * i for i in range(10)], rtol=1e-15)
    v, w = group_limits(10, FlopsBudget(0.5, 1.0))
    assert w[9] == 1.0
    assert v[0] == 0.0
    np.testing.assert_array_equal(v[1:], raw[:-1])


def test_limits_single_group():
    v, w = group_limits(1, FlopsBudget(0.5, 42.0))
    assert v.tolist() == [0.0] and w.tolist() == [42.0]


@pytest.mark.parametrize("N", [0, -1, 2.5])
def test_limits_reject_bad_N(N):
    with pytest.raises(ValueError):
        group_limits(N, FlopsBudget(0.5, 1.0))


def test_k_one_places_everything_in_first_group(cosine100):
    # every limit equals F, so the half-open rule picks the first interval (0, F]
    plan = plan_groups(cosine100, 4, FlopsBudget(1.0, 10.0))
    assert plan.members[0] == tuple(range(100))
    assert all(m == () for m in plan.members[1:])
    assert plan.active_groups == [0]


def _manual_profile(targets, b):
    targets = np.asarray(targets, dtype=float)
    return DifficultyProfile(np.zeros_like(targets), targets, b, None)


def test_boundary_min_target_goes_to_group_zero():
    b = FlopsBudget(0.5, 1.0)
    v, w = group_limits(5, b)
    plan = partition_timesteps(_manual_profile([0.5], b), v, w)
    assert plan.group_of(0) == 0


def test_boundary_exact_upper_limit_stays_in_group():
    b = FlopsBudget(0.5, 1.0)
    v, w = group_limits(5, b)
    plan = partition_timesteps(_manual_profile(list(w), b), v, w)
    assert [plan.group_of(t) for t in range(5)] == [0, 1, 2, 3, 4]
    nudged = partition_timesteps(_manual_profile([np.nextafter(w[1], 2.0)], b), v, w)
    assert nudged.group_of(0) == 2


def test_partition_rejects_uncovered_target():
    b = FlopsBudget(0.5, 1.0)
    v, w = group_limits(3, b)
    with pytest.raises(ValueError):
        partition_timesteps(_manual_profile([1.5], b), v, w)
    with pytest.raises(ValueError):
        partition_timesteps(_manual_profile([0.0], b), v, w)


def test_cosine_partition_matches_membership_oracle(cosine100):
    b = FlopsBudget(0.5, 1.0)
    plan = plan_groups(cosine100, 5, b)
    targets = oracles.flops_targets(oracles.cosine_alpha_bars(100), 0.5, 1.0)
    _, v, w = oracles.limits(5, 0.5, 1.0)
    expected = oracles.membership(targets, v, w)
    assert [list(m) for m in plan.members] == expected
    assert [len(m) for m in plan.members] == [len(g) for g in expected]


def test_constant_shape_single_group(cosine100):
    b = FlopsBudget(0.5, 1.0)
    plan = plan_groups(cosine100, 5, b, "constant")
    v, w = group_limits(5, b)
    target = 0.75
    idx = next(i for i in range(5) if v[i] < target <= w[i])
    assert plan.members[idx] == tuple(range(100))


@pytest.mark.parametrize("shape", ["uni-increasing", "uni-decreasing", "snr"])
def test_shapes_give_contiguous_groups(cosine100, shape):
    plan = plan_groups(cosine100, 5, FlopsBudget(0.5, 1.0), shape)
    for m in plan.members:
        if m:
            assert list(m) == list(range(m[0], m[-1] + 1))
    table = plan.group_index_table()
    diffs = np.diff(table)
    assert np.all(diffs >= 0) if shape != "uni-decreasing" else np.all(diffs <= 0)


def test_shaped_profile_values(cosine100):
    b = FlopsBudget(0.4, 10.0)
    inc = shaped_profile(cosine100, b, "uni-increasing").flops_target
    dec = shaped_profile(cosine100, b, "uni-decreasing").flops_target
    assert inc[0] == 4.0 and inc[-1] == 10.0
    np.testing.assert_allclose(dec, inc[::-1])
    with pytest.raises(ValueError):
        shaped_profile(cosine100, b, "zigzag")


def test_format_plan_lists_every_group(cosine100):
    plan = plan_groups(cosine100, 5, FlopsBudget(0.5, 19906.0))
    text = format_plan(plan)
    assert text.startswith("N = 5\nk = 0.5\nF_max = 19906.0\nT = 100\n")
    for i, m in enumerate(plan.members):
        assert any(line.split()[:1] == [str(i)] and line.split()[3] == str(len(m)) for line in text.splitlines())
    assert len(text.splitlines()) == 6 + 5 + 2 + 100


schedules = st.one_of(
    st.integers(1, 300).map(build_cosine_schedule),
    st.integers(1, 300).map(lambda T: build_linear_schedule(T, 1e-4, 0.02)),
)


@settings(max_examples=80, deadline=None)
@given(schedules, st.integers(1, 20), st.sampled_from([0.1, 0.25, 0.5, 0.9, 1.0]))
def test_plan_invariants(s, N, k):
    b = FlopsBudget(k, 3.0)
    plan = plan_groups(s, N, b)
    flat = sorted(t for m in plan.members for t in m)
    assert flat == list(range(s.T))
    assert plan.v[0] == 0.0
    np.testing.assert_array_equal(plan.v[1:], eq14_limits(N, b)[:-1])
    assert np.all(np.diff(plan.w) >= 0)
    assert plan.w[-1] >= b.F_max
    targets = plan.profile.flops_target
    for i, m in enumerate(plan.members):
        for t in m:
            assert plan.v[i] < targets[t] <= plan.w[i]
        if m:
            assert list(m) == list(range(m[0], m[-1] + 1))
    assert np.all(np.diff(plan.group_index_table()) >= 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 300), st.integers(1, 12), st.floats(0.05, 1.0), st.sampled_from([0.5, 3.0, 1e3, 7.77e9]))
def test_scaling_covariance(T, N, k, c):
    s = build_cosine_schedule(T)
    a = plan_groups(s, N, FlopsBudget(k, 1.0))
    b = plan_groups(s, N, FlopsBudget(k, c))
    np.testing.assert_allclose(b.profile.flops_target, c * a.profile.flops_target, rtol=1e-12)
    np.testing.assert_allclose(b.v, c * a.v, rtol=1e-12)
    np.testing.assert_allclose(b.w, c * a.w, rtol=1e-12)
    assert a.members == b.members
