import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from impulsekit.errors import DomainError, NumericOverflowError
from impulsekit.policy import exit_interval, first_firing, fixed_duration, hit_lower
from impulsekit.process import (Affine, PathSegment, ProcessSpec, drifted_bm, gbm, ou,
                                sample_segment, shift, step)
from impulsekit.rng import Streams


# -- step -------------------------------------------------------------------

def test_step_deterministic_ode():
    assert step(drifted_bm(-1.0, 0.0), 2.0, 0.5, 0.3) == 1.5


def test_step_identity():
    assert step(drifted_bm(0.0, 0.0), 7.0, 1.0, -2.2) == 7.0


def test_step_unit_noise():
    assert step(drifted_bm(0.0, 1.0), 0.0, 1.0, 1.0) == 1.0


def test_step_overflow_names_state():
    spec = ProcessSpec(lambda x: 1e308, lambda x: 0.0)
    with pytest.raises(NumericOverflowError) as exc:
        step(spec, 1e308, 10.0, 0.0)
    assert exc.value.state == 1e308


def test_step_rejects_bad_dt():
    with pytest.raises(DomainError):
        step(drifted_bm(0.0, 1.0), 0.0, 0.0, 1.0)


def test_step_bounds():
    refl = drifted_bm(0.0, 1.0, state_lower=0.0, bound_mode="reflect")
    assert step(refl, 0.1, 1.0, -0.3) == pytest.approx(0.2)
    absorb = drifted_bm(0.0, 1.0, state_lower=0.0, bound_mode="absorb")
    assert step(absorb, 0.1, 1.0, -0.3) == 0.0
    assert step(absorb, 0.0, 1.0, 5.0) == 0.0


def test_builtin_specs():
    assert ou(2.0, 1.0, 0.5).drift(3.0) == pytest.approx(-4.0)
    g = gbm(0.1, 0.2)
    assert g.bound_mode == "reflect" and g.state_lower == 0.0
    assert g.diffusion(2.0) == pytest.approx(0.4)
    with pytest.raises(DomainError):
        drifted_bm(0.0, -1.0)


# -- sample_segment -----------------------------------------------------------

def test_deterministic_hitting():
    seg = sample_segment(drifted_bm(-1.0, 0.0), 2.0, hit_lower(1.0), 1e-3, 10.0,
                         Streams(0).cycle(0, 0))
    assert not seg.truncated
    assert abs(seg.duration - 1.0) <= 1e-3 + 1e-12
    assert abs(seg.final - 1.0) <= 1e-3 + 1e-12


def test_never_hits_truncates():
    seg = sample_segment(drifted_bm(0.0, 0.0), 0.0, hit_lower(-1.0), 0.01, 10.0,
                         Streams(0).cycle(0, 0))
    assert seg.truncated
    assert seg.duration == pytest.approx(10.0)


def test_segment_stays_in_bounds():
    spec = drifted_bm(-2.0, 1.0, state_lower=0.0, state_upper=1.0, bound_mode="reflect")
    seg = sample_segment(spec, 0.5, None, 1e-2, 20.0, Streams(3).cycle(0, 0))
    assert seg.states.min() >= 0.0 and seg.states.max() <= 1.0


def test_segment_determinism():
    spec = ou(1.0, 0.0, 0.7)
    a = sample_segment(spec, 0.0, exit_interval(-1, 1), 1e-3, 50.0, Streams(4).cycle(2, 1))
    b = sample_segment(spec, 0.0, exit_interval(-1, 1), 1e-3, 50.0, Streams(4).cycle(2, 1))
    assert a == b and a.states.tobytes() == b.states.tobytes()


def test_generic_and_compiled_paths_agree():
    # the same affine spec through the callable path must give identical states
    spec = ou(1.0, 0.5, 0.7)
    generic = ProcessSpec(lambda x: 0.5 - x, lambda x: 0.7)
    a = sample_segment(spec, 0.0, exit_interval(-1, 1), 1e-3, 50.0, Streams(4).cycle(0, 0))
    b = sample_segment(generic, 0.0, exit_interval(-1, 1), 1e-3, 50.0, Streams(4).cycle(0, 0))
    assert np.array_equal(a.states, b.states)


def test_grid_refinement_first_order():
    # deterministic OU: Euler error at a fixed time halves with dt
    spec = ou(1.0, 0.0, 0.0)
    errs = []
    for dt in (0.01, 0.005):
        seg = sample_segment(spec, 1.0, fixed_duration(1.0), dt, 2.0, Streams(0).cycle(0, 0))
        errs.append(abs(seg.final - math.exp(-1.0)))
    assert errs[0] / errs[1] >= 1.8


def test_measurability_guard():
    # rewriting the path after the firing index cannot move the firing index
    spec = drifted_bm(-1.0, 1.0)
    rng = np.random.default_rng(0)
    for rep in range(50):
        seg = sample_segment(spec, 1.0, hit_lower(0.0), 1e-2, math.inf,
                             Streams(8).cycle(rep, 0))
        i = seg.n_steps
        tail = rng.normal(size=20) * 3
        mutated = PathSegment(seg.dt, np.concatenate((seg.states, tail)))
        assert first_firing(hit_lower(0.0), mutated) == i


@pytest.mark.slow
def test_exit_time_mean_driftless():
    # E[exit time of (-1, 1)] = 1 for standard Brownian motion from 0
    spec = drifted_bm(0.0, 1.0)
    rule = exit_interval(-1.0, 1.0)

    def mean_exit(dt, n, seed):
        s = Streams(seed)
        gen = s.cycle(0, 0)
        return np.mean([sample_segment(spec, 0.0, rule, dt, math.inf, s.seat(gen, r, 1)).duration
                        for r in range(n)])

    coarse = mean_exit(1e-4, 100_000, 1)
    assert abs(coarse - 1.0) <= 0.02
    # the discrete-monitoring bias shrinks under refinement
    fine = mean_exit(5e-5, 20_000, 2)
    assert abs(fine - 1.0) <= 0.02


# -- shift ------------------------------------------------------------------------

def test_shift_identity_and_index():
    seg = PathSegment(0.1, [1.0, 2.0, 3.0, 4.0])
    assert shift(seg, 0.0) == seg
    assert shift(seg, 0.2).states.tolist() == [3.0, 4.0]
    assert shift(seg, 0.2).offset == 2


def test_shift_errors():
    seg = PathSegment(0.1, [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(DomainError):
        shift(seg, 0.15)
    with pytest.raises(DomainError):
        shift(seg, 0.5)


@settings(max_examples=200, deadline=None)
@given(n=hst.integers(1, 60), a=hst.integers(0, 60), b=hst.integers(0, 60),
       dt=hst.sampled_from([0.1, 1e-3, 0.25]))
def test_shift_semigroup(n, a, b, dt):
    a = a % (n + 1)
    b = b % (n - a + 1)
    seg = PathSegment(dt, np.arange(n + 1, dtype=float))
    assert shift(shift(seg, a * dt), b * dt) == shift(seg, (a + b) * dt)


def test_path_segment_validation():
    with pytest.raises(DomainError):
        PathSegment(0.0, [1.0])
    with pytest.raises(DomainError):
        PathSegment(0.1, [])
