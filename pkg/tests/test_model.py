import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dptradeoff.errors import (BufferTooSmall, InfeasiblePolicy, InfeasibleThresholds, MalformedSpec,
                               NonConvexPower, ProbabilityNotNormalized, RateCapBelowArrivalMax,
                               StateOutOfRange, ZeroArrivalRate)
from dptradeoff.model import (ArrivalDistribution, Policy, PowerProfile, SystemModel, ThresholdSpec,
                              build_transition_matrix, expand_threshold_policy, feasibility_mask,
                              feasible_actions, is_threshold_based, validate_model)
from strategies import Q100_POWER, models, random_model, random_policy, q100, t1, t2


def test_q100_and_t1_are_valid():
    assert validate_model(q100()).Q == 100
    m = validate_model(t1())
    assert (m.Q, m.A, m.S) == (1, 1, 1)


def test_nonconvex_power_rejected():
    with pytest.raises(NonConvexPower):
        SystemModel.from_lists(4, [0.5, 0.5], [0, 1, 1.5])


@pytest.mark.parametrize("power", [[1, 2], [0, -1], [0, 2, 1]])
def test_bad_power_rejected(power):
    with pytest.raises(NonConvexPower):
        PowerProfile(tuple(power))


def test_invalid_models_name_the_failure():
    with pytest.raises(ProbabilityNotNormalized):
        SystemModel.from_lists(3, [0.5, 0.4], [0, 1])
    with pytest.raises(RateCapBelowArrivalMax):
        SystemModel.from_lists(3, [0.5, 0.25, 0.25], [0, 1])
    with pytest.raises(BufferTooSmall):
        SystemModel.from_lists(1, [0.5, 0.25, 0.25], [0, 1, 3])
    with pytest.raises(ZeroArrivalRate):
        SystemModel.from_lists(3, [1.0], [0, 1])


def test_trailing_zero_arrivals_are_trimmed():
    a = ArrivalDistribution((0.5, 0.5, 0.0, 0.0))
    assert a.A == 1
    m = SystemModel.from_lists(2, [0.5, 0.5, 0.0], [0, 1, 3])
    assert m.A == 1


def test_strict_convexity_flag():
    assert PowerProfile((0, 1, 3)).strictly_convex
    assert not PowerProfile((0, 1, 2)).strictly_convex


def test_feasible_actions_examples():
    m = SystemModel.from_lists(5, [0.25, 0.25, 0.25, 0.25], [0, 1, 3, 6])
    assert list(feasible_actions(m, 4)) == [2, 3]
    assert list(feasible_actions(m, 0)) == [0]
    assert list(feasible_actions(t1(), 1)) == [1]
    with pytest.raises(StateOutOfRange):
        feasible_actions(m, 6)


@settings(max_examples=60, deadline=None)
@given(models(q_max=12, a_max=3, s_max=4))
def test_feasible_actions_bounds(m):
    for q in range(m.Q + 1):
        r = feasible_actions(m, q)
        assert len(r) > 0
        assert r[0] == max(0, q - (m.Q - m.A)) and r[-1] == min(m.S, q)


def test_min_delay_expansion_q100():
    m = q100()
    pol = expand_threshold_policy(m, ThresholdSpec((0, 1, 2, 100)))
    expected = np.minimum(np.arange(101), 3)
    assert np.array_equal(pol.actions(), expected)
    mixed = expand_threshold_policy(m, ThresholdSpec((0, 1, 2, 100), 2, 0.0))
    assert mixed == pol


def test_t1_expansion_is_forced_policy():
    pol = expand_threshold_policy(t1(), ThresholdSpec((0, 1)))
    assert np.array_equal(pol.f, np.eye(2))


def test_mixed_expansion_row():
    pol = expand_threshold_policy(t2(), ThresholdSpec((0, 2, 4), 1, 0.3))
    assert np.allclose(pol.f[2], [0.0, 0.7, 0.3])


def test_expansion_errors():
    with pytest.raises(MalformedSpec):
        expand_threshold_policy(t2(), ThresholdSpec((0, 2)))
    with pytest.raises(MalformedSpec):
        expand_threshold_policy(t2(), ThresholdSpec((0, 2, 3)))
    with pytest.raises(MalformedSpec):
        ThresholdSpec((2, 1, 4))
    # sending nothing at q=3 overflows when two packets may arrive
    with pytest.raises(InfeasibleThresholds):
        expand_threshold_policy(t2(), ThresholdSpec((3, 3, 4)))


def test_policy_validation():
    with pytest.raises(InfeasiblePolicy):
        Policy(np.array([[0.5, 0.4], [0.0, 1.0]]))
    from dptradeoff.model import check_feasible
    with pytest.raises(InfeasiblePolicy):
        check_feasible(t1(), Policy(np.array([[1.0, 0.0], [1.0, 0.0]])))


def test_threshold_detection_examples():
    m = SystemModel.from_lists(3, [0.5, 0.5], [0, 1, 3])
    # sends two at q=2 but only one at q=3
    pol = Policy.deterministic([0, 1, 2, 1], 2)
    assert is_threshold_based(m, pol) == (False, None)
    # sending two packets from a queue of one is not a policy at all
    with pytest.raises(InfeasiblePolicy):
        is_threshold_based(m, Policy.deterministic([0, 2, 1, 1], 2))
    ok, t = is_threshold_based(t1(), expand_threshold_policy(t1(), ThresholdSpec((0, 1))))
    assert ok and t == (0, 1)


@settings(max_examples=60, deadline=None)
@given(models(q_max=12, a_max=3, s_max=4), st.integers(0, 2**32 - 1))
def test_threshold_round_trip(m, seed):
    rng = np.random.default_rng(seed)
    # random nondecreasing thresholds, then keep only the feasible ones
    t = tuple(sorted(rng.integers(0, m.Q + 1, m.S))) + (m.Q,)
    try:
        pol = expand_threshold_policy(m, ThresholdSpec(t))
    except InfeasibleThresholds:
        return
    ok, witness = is_threshold_based(m, pol)
    assert ok
    assert expand_threshold_policy(m, ThresholdSpec(witness)) == pol


def test_t1_transition_matrix():
    lam = build_transition_matrix(t1(), expand_threshold_policy(t1(), ThresholdSpec((0, 1))))
    assert np.allclose(lam, 0.5)


def test_point_mass_arrivals_give_permutation_like_matrix():
    m = SystemModel.from_lists(4, [0.0, 0.0, 1.0], [0, 1, 3])
    pol = Policy.deterministic([0, 1, 2, 2, 2], 2)
    lam = build_transition_matrix(m, pol)
    for i, s in enumerate(pol.actions()):
        assert lam[i - s + 2, i] == 1.0
    assert set(np.unique(lam)) <= {0.0, 1.0}


def test_column_stochastic_and_banded_on_random_policies():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        m = random_model(rng, q_max=12, a_max=3, s_max=4, strict=False)
        pol = random_policy(rng, m)
        lam = build_transition_matrix(m, pol)
        assert np.allclose(lam.sum(axis=0), 1.0, atol=1e-12)
        i, j = np.meshgrid(np.arange(m.Q + 1), np.arange(m.Q + 1))
        assert np.all(lam[(j < i - m.S) | (j > i + m.A)] == 0.0)


def test_expansion_respects_mask():
    rng = np.random.default_rng(3)
    for _ in range(200):
        m = random_model(rng, q_max=12)
        pol = random_policy(rng, m, deterministic=True)
        assert np.all(pol.f[~feasibility_mask(m)] == 0.0)


def test_q100_power_profile():
    assert np.allclose(q100().P, Q100_POWER)
