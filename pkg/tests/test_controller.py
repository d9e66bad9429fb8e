import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from impulsekit import impulse as imp
from impulsekit.controller import (cycle_functionals, cycle_matrix, evaluate, global_path,
                                   left_limit, pre_impulse, replay_intervention_times,
                                   sample_states, simulate_trajectory)
from impulsekit.errors import DomainError, PreconditionError
from impulsekit.policy import (ConstantTarget, PolicySpec, ShiftTarget, exit_interval,
                               fixed_duration, ss_policy)
from impulsekit.process import drifted_bm, ou
from impulsekit.renewal import CostSpec, LinearHolding
from impulsekit.rng import Streams

DT = 1e-3


def sawtooth_traj(horizon=3.5, kernel=None, S=1.0):
    return simulate_trajectory(drifted_bm(-1.0, 0.0), kernel or imp.deterministic(),
                               ss_policy(0.0, S), S, horizon, DT, Streams(0))


def test_sawtooth_interventions():
    traj = sawtooth_traj()
    assert traj.intervention_count == 3
    assert np.allclose(traj.tau[1:], [1.0, 2.0, 3.0], atol=DT * 1.01)
    for k in (1, 2, 3):
        y, z, v = pre_impulse(traj, k)
        assert abs(y) <= DT and z == 1.0 and v == 1.0
    assert traj.cycles[-1].truncated


def test_short_horizon_has_no_interventions():
    traj = sawtooth_traj(0.5)
    assert traj.intervention_count == 0
    assert len(traj.cycles) == 1 and traj.cycles[0].truncated


def test_partial_delivery_mean_cycle_length():
    spec, kernel = drifted_bm(-1.0, 0.0), imp.partial_fraction(0.5, 1.0)
    lengths, _ = cycle_matrix(spec, kernel, ss_policy(0.0, 2.0), 2.0, DT, Streams(2), 1, 10_000)
    # cycle length = V = 2U, E[V] = 1.5
    assert abs(lengths[0, 1:].mean() - 1.5) <= 0.02


def test_evaluate_examples():
    traj = sawtooth_traj()
    assert evaluate(traj, 0.5) == pytest.approx(0.5)
    tau1 = traj.tau[1]
    assert evaluate(traj, tau1) == 1.0
    assert abs(evaluate(traj, tau1 - DT) - pre_impulse(traj, 1)[0]) <= DT + 1e-12
    assert left_limit(traj, tau1) == pre_impulse(traj, 1)[0]
    with pytest.raises(DomainError):
        evaluate(traj, 0.5 + DT / 3)
    with pytest.raises(DomainError):
        evaluate(traj, 4.0)


def test_pre_impulse_range():
    traj = sawtooth_traj()
    with pytest.raises(DomainError):
        pre_impulse(traj, 4)
    with pytest.raises(DomainError):
        pre_impulse(traj, 0)


def test_half_delivery():
    traj = sawtooth_traj(10.0, imp.partial_fraction(0.5, 0.5), S=2.0)
    for k in range(1, traj.intervention_count + 1):
        y, z, v = pre_impulse(traj, k)
        assert v == pytest.approx(1.0, abs=DT)


@pytest.mark.parametrize("h,c,expected", [(None, 0.0, 1.0), (LinearHolding(1.0), 0.0, 1.5),
                                          (LinearHolding(1.0), 2.0, 3.5)])
def test_cycle_functionals_sawtooth(h, c, expected):
    traj = sawtooth_traj(10.5)
    (l0, c0), rows = cycle_functionals(traj, CostSpec(1.0, c, h))
    assert rows.shape == (9, 2)
    assert np.allclose(rows[:, 0], 1.0, atol=1.01 * DT)
    assert np.allclose(rows[:, 1], expected, atol=5 * DT)
    assert c0 == pytest.approx(expected - 1.0 - c, abs=5 * DT)


def test_cycle_functionals_needs_completed_cycle():
    with pytest.raises(PreconditionError):
        cycle_functionals(sawtooth_traj(0.5), CostSpec())


POLICIES = [
    ss_policy(0.0, 1.0),
    PolicySpec(exit_interval(-0.5, 1.5), ConstantTarget(0.5)),
    PolicySpec(fixed_duration(0.05), ShiftTarget(0.3)),
]


@settings(max_examples=25, deadline=None)
@given(seed=hst.integers(0, 10**6), policy=hst.sampled_from(POLICIES),
       kernel=hst.sampled_from([imp.deterministic(), imp.additive_noise(0.1),
                                imp.partial_fraction(0.5, 1.0)]))
def test_pasting_and_limits(seed, policy, kernel):
    spec = drifted_bm(-1.0, 0.8)
    traj = simulate_trajectory(spec, kernel, policy, 0.5, 2.0, 0.01, Streams(seed))
    t, states, cyc, is_int = global_path(traj)
    for n in range(0, t.size, 7):
        assert evaluate(traj, n * 0.01) == states[n]
    tau = traj.tau
    assert np.all(np.diff(tau) > 0)
    for k in range(1, traj.intervention_count + 1):
        y, _, v = pre_impulse(traj, k)
        assert left_limit(traj, tau[k]) == y
        assert evaluate(traj, tau[k]) == v
        assert is_int[traj.cycles[k].start]
    assert all(replay_intervention_times(traj, policy))


def test_determinism():
    spec = ou(1.0, 0.5, 0.6)
    a = simulate_trajectory(spec, imp.additive_noise(0.1), ss_policy(0, 1), 1.0, 5.0, DT,
                            Streams(9), rep=3)
    b = simulate_trajectory(spec, imp.additive_noise(0.1), ss_policy(0, 1), 1.0, 5.0, DT,
                            Streams(9), rep=3)
    assert np.array_equal(global_path(a)[1], global_path(b)[1])


def test_inadmissible_flag():
    traj = simulate_trajectory(drifted_bm(-1.0, 0.0), imp.deterministic(),
                               ss_policy(0.0, 0.0015), 0.0015, 1.0, DT, Streams(0))
    assert traj.inadmissible_suspect
    assert not sawtooth_traj().inadmissible_suspect


def test_parallel_matches_serial():
    spec = drifted_bm(-1.0, 0.5)
    args = (spec, imp.deterministic(), ss_policy(0.0, 1.0), [0.5, 1.0])
    v1, c1 = sample_states(*args, [0.1, 1.0, 1.3], 0.01, Streams(4), 40, threads=1)
    v2, c2 = sample_states(*args, [0.1, 1.0, 1.3], 0.01, Streams(4), 40, threads=2)
    assert np.array_equal(v1, v2) and np.array_equal(c1, c2)
    l1, _ = cycle_matrix(*args, 0.01, Streams(4), 12, 3, threads=1)
    l2, _ = cycle_matrix(*args, 0.01, Streams(4), 12, 3, threads=3)
    assert np.array_equal(l1, l2) and l1.shape == (12, 4)


def test_sample_states_matches_trajectories():
    spec = drifted_bm(-1.0, 0.5)
    pol = ss_policy(0.0, 1.0)
    times = [0.1, 1.0, 1.3]
    vals, _ = sample_states(spec, imp.deterministic(), pol, 1.0, times, 0.01, Streams(6), 5)
    for rep in range(5):
        traj = simulate_trajectory(spec, imp.deterministic(), pol, 1.0, 1.3, 0.01, Streams(6), rep)
        assert [evaluate(traj, t) for t in times] == vals[rep].tolist()
