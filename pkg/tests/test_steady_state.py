import numpy as np
import pytest
from hypothesis import given, settings

from dptradeoff.errors import NotAClosedClass, NotUnichain, PoliciesDifferInMultipleRows, ZeroPowerDifference
from dptradeoff.model import Policy, SystemModel, ThresholdSpec, build_transition_matrix, expand_threshold_policy
from dptradeoff.steady_state import (average_delay, average_power, classify_chain, epsilon_prime,
                                     evaluate_from_empty, evaluate_policy, mix_policies, reduce_to_unichain,
                                     reduction_steps, restricted_distribution, segment_slope,
                                     stationary_distribution)
from dptradeoff.vertex_walk import initial_min_delay_spec
from strategies import models, random_model, random_policy, q100, single_row_pair, t1, t2


def min_delay(m):
    return expand_threshold_policy(m, initial_min_delay_spec(m))


def q2():
    return SystemModel.from_lists(2, [0.5, 0.5], [0, 1])


def test_classify_examples():
    c = classify_chain(build_transition_matrix(t1(), min_delay(t1())))
    assert c.closed_classes == [frozenset({0, 1})] and not c.transient_states and c.is_unichain
    c = classify_chain(build_transition_matrix(q2(), min_delay(q2())))
    assert c.closed_classes == [frozenset({0, 1})] and c.transient_states == frozenset({2}) and c.is_unichain
    c = classify_chain(np.eye(3)[:, [0, 0, 2]])
    assert sorted(map(sorted, c.closed_classes)) == [[0], [2]] and not c.is_unichain


def test_classify_properties_random():
    rng = np.random.default_rng(11)
    for _ in range(300):
        m = random_model(rng, q_max=12, strict=False, sparse=True)
        lam = build_transition_matrix(m, random_policy(rng, m, deterministic=True))
        c = classify_chain(lam)
        states = set().union(*c.closed_classes) | set(c.transient_states)
        assert states == set(range(m.Q + 1))
        for cls in c.closed_classes:
            # nothing leaves a closed class
            out = lam[:, sorted(cls)].sum(axis=1)
            assert np.all(out[[i for i in range(m.Q + 1) if i not in cls]] == 0)


def test_stationary_examples():
    assert np.allclose(stationary_distribution(t1(), min_delay(t1())).pi, [0.5, 0.5])
    assert np.allclose(stationary_distribution(q2(), min_delay(q2())).pi, [0.5, 0.5, 0.0])
    # one packet per slot, always sent: the queue sits at 1
    m = SystemModel.from_lists(1, [0.0, 1.0], [0, 1])
    pol = Policy.deterministic([0, 1], 1)
    assert np.allclose(stationary_distribution(m, pol).pi, [0.0, 1.0])


def test_stationary_rejects_multichain():
    m, pol = two_class_policy()
    assert not classify_chain(build_transition_matrix(m, pol)).is_unichain
    with pytest.raises(NotUnichain):
        stationary_distribution(m, pol)


def test_stationary_fixed_point_random():
    rng = np.random.default_rng(5)
    done = 0
    while done < 500:
        m = random_model(rng, q_max=12, strict=False, sparse=True)
        pol = random_policy(rng, m, deterministic=bool(done % 2))
        lam = build_transition_matrix(m, pol)
        if not classify_chain(lam).is_unichain:
            continue
        pi = stationary_distribution(m, pol).pi
        assert np.abs(lam @ pi - pi).max() <= 1e-10
        assert abs(pi.sum() - 1) <= 1e-10 and pi.min() >= 0
        cls = classify_chain(lam)
        assert np.all(pi[sorted(cls.transient_states)] == 0)
        # Little's law identity
        assert average_delay(m, pi) * m.mean_arrival == pytest.approx(np.arange(m.Q + 1) @ pi, abs=1e-12)
        done += 1


def test_power_and_delay_examples():
    pi = stationary_distribution(t1(), min_delay(t1()))
    assert average_power(t1(), min_delay(t1()), pi) == pytest.approx(0.5)
    assert average_delay(t1(), pi) == pytest.approx(1.0)
    m = q100()
    pt = evaluate_policy(m, min_delay(m))
    assert pt.power == pytest.approx(21.675e-14, rel=1e-12)
    assert pt.delay == pytest.approx(1.0, rel=1e-12)
    # a queue pinned at Q
    top = np.zeros(m.Q + 1)
    top[-1] = 1.0
    assert average_delay(m, top) == pytest.approx(100 / 1.5)


@settings(max_examples=40, deadline=None)
@given(models(q_max=12, a_max=3, s_max=3))
def test_min_delay_policy_sends_previous_batch(m):
    pt = evaluate_policy(m, min_delay(m))
    assert pt.delay == pytest.approx(1.0, abs=1e-12)
    assert pt.power == pytest.approx(m.alpha @ m.P[: m.A + 1], rel=1e-12)


def test_zero_power_profile():
    m = SystemModel.from_lists(3, [0.5, 0.5], [0, 0])
    assert evaluate_policy(m, min_delay(m)).power == 0.0


def test_points_satisfy_invariants():
    rng = np.random.default_rng(2)
    for _ in range(200):
        m = random_model(rng, q_max=12)
        pt = evaluate_from_empty(m, random_policy(rng, m))
        assert pt.delay >= 1.0 - 1e-12
        assert -1e-15 <= pt.power <= m.P.max() + 1e-12


def test_mix_endpoints_and_errors():
    a, b = min_delay(t2()), expand_threshold_policy(t2(), ThresholdSpec((0, 2, 4)))
    assert mix_policies(a, b, 0.0) == a and mix_policies(a, b, 1.0) == b
    with pytest.raises(ValueError):
        mix_policies(a, b, 1.5)


def t2_pair():
    m = t2()
    return m, min_delay(m), expand_threshold_policy(m, ThresholdSpec((0, 2, 4)))


def test_t2_mix_on_segment():
    m, a, b = t2_pair()
    pa, pb = evaluate_policy(m, a), evaluate_policy(m, b)
    pm = evaluate_policy(m, mix_policies(a, b, 0.5))
    cross = (pb.power - pa.power) * (pm.delay - pa.delay) - (pb.delay - pa.delay) * (pm.power - pa.power)
    assert abs(cross) <= 1e-12
    assert min(pa.power, pb.power) <= pm.power <= max(pa.power, pb.power)


def test_t2_epsilon_prime():
    m, a, b = t2_pair()
    assert epsilon_prime(m, a, b, 0.0) == 0.0
    assert epsilon_prime(m, a, b, 1.0) == pytest.approx(1.0, abs=1e-15)
    pa, pb = evaluate_policy(m, a), evaluate_policy(m, b)
    pm = evaluate_policy(m, mix_policies(a, b, 0.3))
    assert epsilon_prime(m, a, b, 0.3) == pytest.approx((pm.power - pa.power) / (pb.power - pa.power), abs=1e-12)


def test_t2_segment_slope():
    m, a, b = t2_pair()
    pa, pb = evaluate_policy(m, a), evaluate_policy(m, b)
    fd = (pb.delay - pa.delay) / (pb.power - pa.power)
    assert segment_slope(m, a, b) == pytest.approx(fd, rel=1e-9)
    assert segment_slope(m, b, a) == pytest.approx(segment_slope(m, a, b), rel=1e-12)


def test_slope_errors():
    m = t2()
    a = min_delay(m)
    with pytest.raises(PoliciesDifferInMultipleRows):
        segment_slope(m, a, Policy.deterministic([0, 0, 0, 1, 2], 2))
    with pytest.raises(PoliciesDifferInMultipleRows):
        epsilon_prime(m, a, a, 0.5)
    # equal delays and powers: the changed state is never visited from the min-delay chain
    zero = SystemModel.from_lists(4, [0.5, 0.5], [0, 1, 3])
    base = Policy.deterministic([0, 1, 1, 1, 1], 2)
    other = Policy.deterministic([0, 1, 1, 1, 2], 2)
    with pytest.raises(ZeroPowerDifference):
        segment_slope(zero, base, other)


def test_mixing_is_collinear_random_pairs():
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 200:
        m = random_model(rng, q_max=10).normalized()
        pair = single_row_pair(rng, m)
        if pair is None:
            continue
        a, b = pair
        pa, pb = evaluate_policy(m, a), evaluate_policy(m, b)
        length = np.hypot(pb.power - pa.power, pb.delay - pa.delay)
        grid = np.linspace(0, 1, 21)
        eps_p = [epsilon_prime(m, a, b, e) for e in grid]
        assert np.all(np.diff(eps_p) >= -1e-12)
        for e, ep in zip(grid[1:-1:4], eps_p[1:-1:4]):
            pm = evaluate_policy(m, mix_policies(a, b, e))
            cross = (pb.power - pa.power) * (pm.delay - pa.delay) - (pb.delay - pa.delay) * (pm.power - pa.power)
            assert abs(cross) / length <= 1e-9
            assert ep == pytest.approx((pm.power - pa.power) / (pb.power - pa.power), abs=1e-9)
        fd = (pb.delay - pa.delay) / (pb.power - pa.power)
        assert segment_slope(m, a, b) == pytest.approx(fd, rel=1e-9, abs=1e-12)
        checked += 1


def two_class_policy():
    # single arrivals: {0, 1} drains each slot, while idling at q=2 keeps {2, 3} from draining
    m = SystemModel.from_lists(4, [0.5, 0.5], [0, 1])
    pol = Policy.deterministic([0, 1, 0, 1, 1], 1)
    return m, pol


def test_reduce_unichain_unchanged():
    m = t2()
    pol = min_delay(m)
    cls = classify_chain(build_transition_matrix(m, pol)).closed_classes[0]
    assert reduction_steps(m, pol, cls) == []
    assert reduce_to_unichain(m, pol, cls) == pol


def test_reduce_two_class_matches_restricted_chain():
    m, pol = two_class_policy()
    c = classify_chain(build_transition_matrix(m, pol))
    assert not c.is_unichain
    for target in c.closed_classes:
        steps = reduction_steps(m, pol, target)
        outside = m.Q + 1 - len(target)
        assert len(steps) <= outside
        reduced = reduce_to_unichain(m, pol, target)
        rc = classify_chain(build_transition_matrix(m, reduced))
        assert rc.closed_classes == [target]
        assert np.array_equal(reduced.f[sorted(target)], pol.f[sorted(target)])
        pi = restricted_distribution(m, pol, target)
        got = evaluate_policy(m, reduced)
        assert got.power == pytest.approx(average_power(m, pol, pi), abs=1e-10)
        assert got.delay == pytest.approx(average_delay(m, pi), abs=1e-10)


def test_reduce_rejects_non_closed_class():
    m, pol = two_class_policy()
    with pytest.raises(NotAClosedClass):
        reduce_to_unichain(m, pol, {0, 1, 2})
