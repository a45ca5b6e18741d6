import numpy as np
import pytest

from dptradeoff.errors import InfeasiblePolicy
from dptradeoff.model import Policy, SystemModel, expand_threshold_policy
from dptradeoff.simulator import (SimulationConfig, _run_block, _sampling_table, simulate,
                                  simulate_curve_points)
from dptradeoff.steady_state import evaluate_policy
from dptradeoff.vertex_walk import initial_min_delay_spec, policy_for_constraint, trace_curve
from strategies import q100, t1, t2


def min_delay(m):
    return expand_threshold_policy(m, initial_min_delay_spec(m))


def test_config_validation():
    assert SimulationConfig(horizon=1000).warmup == 10
    with pytest.raises(ValueError):
        SimulationConfig(horizon=100, warmup=100)
    with pytest.raises(ValueError):
        SimulationConfig(horizon=100, batch_count=1)
    with pytest.raises(ValueError):
        SimulationConfig(horizon=100, warmup=-1)


def test_t1_long_run():
    r = simulate(t1(), min_delay(t1()), SimulationConfig(horizon=10**6, seed=1, warmup=10**3))
    assert r.empirical_power == pytest.approx(0.5, rel=0.01)
    assert r.empirical_delay == pytest.approx(1.0, rel=0.01)
    assert r.slots_simulated == 10**6
    assert r.half_width_power >= 0 and r.half_width_delay >= 0


def test_deterministic_arrivals_have_no_variance():
    m = SystemModel.from_lists(3, [0.0, 0.0, 1.0], [0, 1, 3])
    r = simulate(m, min_delay(m), SimulationConfig(horizon=10**4, seed=3))
    assert r.empirical_delay == 1.0
    assert r.empirical_power == 3.0
    assert r.half_width_delay == 0.0 and r.half_width_power == 0.0


def test_q100_min_delay_power():
    m = q100()
    r = simulate(m, min_delay(m), SimulationConfig(horizon=10**6, seed=7))
    assert abs(r.empirical_power - 21.675e-14) <= 3 * r.half_width_power
    assert abs(r.empirical_delay - 1.0) <= 3 * r.half_width_delay + 1e-12


def test_reproducible_and_seed_dependent():
    m = t2()
    pol = expand_threshold_policy(m, initial_min_delay_spec(m))
    cfg = SimulationConfig(horizon=5 * 10**4, seed=42)
    assert simulate(m, pol, cfg) == simulate(m, pol, cfg)
    assert simulate(m, pol, cfg) != simulate(m, pol, SimulationConfig(horizon=5 * 10**4, seed=43))


def test_infeasible_policy_rejected():
    with pytest.raises(InfeasiblePolicy):
        simulate(t1(), Policy(np.array([[1.0, 0.0], [1.0, 0.0]])), SimulationConfig(horizon=100))


def test_slot_loop_reports_overflow():
    # a table that sends nothing at q=1 on a Q=1 buffer must trip the bounds check
    act = _sampling_table(np.array([[1.0, 0.0], [1.0, 0.0]]))
    arr = _sampling_table(np.array([0.0, 1.0]))[0]
    z = np.zeros(2)
    q, bad = _run_block(0, 0, np.full(5, 0.5), np.full(5, 0.5), act, arr, np.array([0.0, 1.0]),
                        1, 0, 2, 2, z.copy(), z.copy(), z.copy())
    assert bad == 1


def test_sampling_table_never_picks_zero_probability_actions():
    cum = _sampling_table(np.array([[0.3, 0.7, 0.0], [0.0, 1.0, 0.0]]))
    assert cum[0, 1] == 2.0 and cum[1, 1] == 2.0 and cum[1, 0] == 0.0


def test_curve_points():
    c = trace_curve(t1())
    [r] = simulate_curve_points(t1(), c, [0.5], SimulationConfig(horizon=10**5, seed=2))
    assert abs(r.empirical_power - 0.5) <= 3 * r.half_width_power
    assert simulate_curve_points(t1(), c, [], SimulationConfig(horizon=100)) == []


def test_t2_midpoint_mixed_policy():
    m = t2()
    c = trace_curve(m)
    a, b = c.vertices[0], c.vertices[1]
    pth = (a.power + b.power) / 2
    [r] = simulate_curve_points(m, c, [pth], SimulationConfig(horizon=10**6, seed=5))
    assert abs(r.empirical_power - pth) <= 3 * r.half_width_power
    assert abs(r.empirical_delay - (a.delay + b.delay) / 2) <= 3 * r.half_width_delay


def test_interval_coverage_over_seeds():
    m = t2()
    c = trace_curve(m)
    pth = (c.vertices[0].power + c.vertices[1].power) / 2
    spec, point = policy_for_constraint(c, pth)
    pol = expand_threshold_policy(m, spec)
    exact = evaluate_policy(m, pol)
    hits_p = hits_d = 0
    for seed in range(100):
        r = simulate(m, pol, SimulationConfig(horizon=4 * 10**4, seed=seed))
        hits_p += abs(r.empirical_power - exact.power) <= r.half_width_power
        hits_d += abs(r.empirical_delay - exact.delay) <= r.half_width_delay
    assert hits_p >= 90 and hits_d >= 90
