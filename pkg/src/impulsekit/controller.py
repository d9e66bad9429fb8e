"""Impulse-controlled trajectories built by sampling cycles and pasting them.

Cycle ``k`` starts at grid index ``start_k`` (``tau_k = start_k * dt``) from
``V_k`` and runs the fundamental diffusion until its stop rule fires. The
segment's last state is the pre-impulse location ``Y_{k+1}`` (left limit);
the controlled path takes the value ``V_{k+1}`` at ``tau_{k+1}``. On the grid:

    X(tau_k + m dt) = cycles[k].segment.states[m],   0 <= m < sigma_k / dt
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import count
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import DomainError, PreconditionError
from .impulse import ImpulseDraw, ImpulseKernel, sample_impulse
from .parallel import run_replications
from .policy import first_firing, nominal_target
from .process import PathSegment, ProcessSpec, grid_index, sample_segment, steps_within
from .rng import Streams, as_streams

# default admissibility cap, interventions per unit time, as a fraction of 1/dt
DEFAULT_RATE_FRACTION = 0.1
DEFAULT_MAX_STEPS = 10**7


@dataclass(frozen=True, eq=False)
class CyclePath:
    index: int
    v: float
    segment: PathSegment
    start: int
    y_next: Optional[float] = None
    z_next: Optional[float] = None
    draw: Optional[ImpulseDraw] = None

    @property
    def sigma(self) -> float:
        return self.segment.duration

    @property
    def n_steps(self) -> int:
        return self.segment.n_steps

    @property
    def end(self) -> int:
        return self.start + self.segment.n_steps

    @property
    def truncated(self) -> bool:
        return self.segment.truncated


@dataclass(frozen=True, eq=False)
class ControlledTrajectory:
    x0: float
    dt: float
    horizon: float
    cycles: tuple
    inadmissible_suspect: bool = False

    @property
    def starts(self) -> np.ndarray:
        return np.array([c.start for c in self.cycles], dtype=np.int64)

    @property
    def tau(self) -> np.ndarray:
        """``tau_0 = 0, tau_1, ..., tau_n`` for the n completed interventions."""
        return self.starts * self.dt

    @property
    def intervention_count(self) -> int:
        return sum(c.draw is not None for c in self.cycles)

    @property
    def n_grid(self) -> int:
        return steps_within(self.horizon, self.dt)


def _bind_kernel(kernel: ImpulseKernel, spec: ProcessSpec) -> ImpulseKernel:
    if kernel.lower is None and kernel.upper is None and (
            spec.state_lower is not None or spec.state_upper is not None):
        return kernel.with_bounds(spec.state_lower, spec.state_upper)
    return kernel


def iter_cycles(spec: ProcessSpec, kernel: ImpulseKernel, policy, x0: float, dt: float,
                streams, rep: int = 0, horizon: Optional[float] = None,
                max_cycles: Optional[int] = None,
                max_steps: int = DEFAULT_MAX_STEPS) -> Iterator[CyclePath]:
    """Yield cycles in order until the horizon, ``max_cycles``, or a cycle that never fires.

    Cycle ``k`` draws its path noise and the impulse that ends it from
    ``streams.cycle(rep, k)``.
    """
    streams = as_streams(streams)
    kernel = _bind_kernel(kernel, spec)
    n_h = None if horizon is None else steps_within(horizon, dt)
    start, v, prev_sigma = 0, float(x0), None
    rng = streams.cycle(rep, 0)
    for k in count():
        if max_cycles is not None and k >= max_cycles:
            return
        if k > 0:
            streams.seat_cycle(rng, rep, k)
        rule = policy.rule_for_cycle(k, x0, prev_sigma)
        limit = max_steps if n_h is None else min(n_h - start, max_steps)
        if limit <= 0:
            yield CyclePath(k, v, PathSegment(dt, [v], truncated=True), start)
            return
        seg = sample_segment(spec, v, rule, dt, math.inf, rng, max_steps=limit)
        if seg.truncated:
            yield CyclePath(k, v, seg, start)
            return
        y = seg.final
        z = nominal_target(policy, y)
        v_next = sample_impulse(kernel, y, z, rng)
        yield CyclePath(k, v, seg, start, y, z, ImpulseDraw(y, z, v_next))
        start += seg.n_steps
        prev_sigma = seg.duration
        v = v_next


def simulate_trajectory(spec: ProcessSpec, kernel: ImpulseKernel, policy, x0: float,
                        horizon: float, dt: float, streams, rep: int = 0,
                        rate_cap: Optional[float] = None,
                        max_steps: int = DEFAULT_MAX_STEPS) -> ControlledTrajectory:
    """Sample one controlled path on ``[0, horizon]``.

    The final cycle is the one that reaches the horizon (``truncated``). If
    interventions per unit time exceed ``rate_cap`` (default ``0.1/dt``) the
    trajectory is flagged ``inadmissible_suspect``.
    """
    if not dt > 0 or not horizon >= dt:
        raise DomainError("need horizon >= dt > 0")
    cycles = tuple(iter_cycles(spec, kernel, policy, x0, dt, streams, rep,
                               horizon=horizon, max_steps=max_steps))
    cap = DEFAULT_RATE_FRACTION / dt if rate_cap is None else rate_cap
    n = sum(c.draw is not None for c in cycles)
    return ControlledTrajectory(float(x0), float(dt), float(horizon), cycles,
                                inadmissible_suspect=n / horizon > cap)


def _locate(traj: ControlledTrajectory, n: int) -> CyclePath:
    k = int(np.searchsorted(traj.starts, n, side="right")) - 1
    return traj.cycles[k]


def evaluate(traj: ControlledTrajectory, t: float) -> float:
    """Right-continuous value of the controlled path at grid time ``t``."""
    n = grid_index(t, traj.dt)
    if not 0 <= n <= traj.n_grid:
        raise DomainError(f"time {t} outside [0, {traj.horizon}]")
    cyc = _locate(traj, n)
    return float(cyc.segment.states[n - cyc.start])


def left_limit(traj: ControlledTrajectory, t: float) -> float:
    """Left limit at grid time ``t``: ``Y_k`` at an intervention, else the value."""
    n = grid_index(t, traj.dt)
    if not 0 <= n <= traj.n_grid:
        raise DomainError(f"time {t} outside [0, {traj.horizon}]")
    cyc = _locate(traj, n)
    if n == cyc.start and cyc.index > 0:
        return float(traj.cycles[cyc.index - 1].y_next)
    return float(cyc.segment.states[n - cyc.start])


def pre_impulse(traj: ControlledTrajectory, k: int) -> tuple[float, float, float]:
    """``(Y_k, Z_k, V_k)`` of intervention ``k >= 1``."""
    if not 1 <= k <= traj.intervention_count:
        raise DomainError(f"intervention {k} outside 1..{traj.intervention_count}")
    d = traj.cycles[k - 1].draw
    return d.y, d.z, d.v


def global_path(traj: ControlledTrajectory):
    """Grid arrays ``(t, state, cycle_index, is_intervention)`` of the pasted path."""
    n = traj.n_grid
    states = np.empty(n + 1)
    cyc_idx = np.empty(n + 1, dtype=np.int64)
    for c in traj.cycles:
        m = c.n_steps if c.draw is not None else c.n_steps + 1
        states[c.start:c.start + m] = c.segment.states[:m]
        cyc_idx[c.start:c.start + m] = c.index
    is_int = np.zeros(n + 1, dtype=bool)
    for c in traj.cycles[1:]:
        is_int[c.start] = True
    return np.arange(n + 1) * traj.dt, states, cyc_idx, is_int


def replay_intervention_times(traj: ControlledTrajectory, policy) -> list[bool]:
    """Re-run each cycle's rule on the shifted global path; True where sigma is reproduced.

    The shifted path starts with ``V_k`` and continues with grid left limits of
    the controlled path (``Y`` at intervention times).
    """
    _, states, _, is_int = global_path(traj)
    left = states.copy()
    for c in traj.cycles[1:]:
        left[c.start] = traj.cycles[c.index - 1].y_next
    out = []
    prev_sigma = None
    for c in traj.cycles:
        if c.draw is None:
            break
        rule = policy.rule_for_cycle(c.index, traj.x0, prev_sigma)
        path = np.concatenate(([c.v], left[c.start + 1:]))
        sigma = first_firing(rule, PathSegment(traj.dt, path))
        out.append(sigma == c.n_steps)
        prev_sigma = c.sigma
    return out


def _eval_h(h, states: np.ndarray) -> np.ndarray:
    if h is None:
        return np.zeros_like(states)
    vals = np.asarray(h(states), dtype=float)
    if vals.shape != states.shape:
        vals = np.vectorize(h, otypes=[float])(states)
    return vals


def holding_integral(h, segment: PathSegment) -> float:
    """Trapezoidal integral of ``h`` along the segment."""
    if h is None or segment.n_steps == 0:
        return 0.0
    vals = _eval_h(h, segment.states)
    return float(segment.dt * (vals.sum() - 0.5 * (vals[0] + vals[-1])))


def cycle_cost(cycle: CyclePath, entry: Optional[ImpulseDraw], cost) -> float:
    """Intervention charge for the impulse that started the cycle plus holding cost."""
    total = holding_integral(cost.h, cycle.segment)
    if entry is not None:
        total += cost.K + cost.c * abs(entry.v - entry.y)
    return total


def cycle_functionals(traj: ControlledTrajectory, cost):
    """Per-cycle ``(length, cost)``.

    Returns ``(cycle0, completed)`` where ``cycle0`` is the initial cycle's
    pair (no intervention charge) and ``completed`` an ``(n, 2)`` array for
    the cycles ``k >= 1`` that ended in an intervention.
    """
    cycles = traj.cycles
    if cycles[0].draw is None:
        raise PreconditionError("no completed cycle")
    c0 = (cycles[0].sigma, cycle_cost(cycles[0], None, cost))
    rows = [(c.sigma, cycle_cost(c, cycles[c.index - 1].draw, cost))
            for c in cycles[1:] if c.draw is not None]
    return c0, np.array(rows, dtype=float).reshape(-1, 2)


def initial_state(x0, streams: Streams, rep: int) -> float:
    if np.ndim(x0) == 0:
        return float(x0)
    choices = np.asarray(x0, dtype=float)
    return float(choices[streams.replication(rep).integers(choices.size)])


def _states_worker(args, rep):
    spec, kernel, policy, x0, idx, dt, streams = args
    x = initial_state(x0, streams, rep)
    values = np.empty(idx.size)
    cyc = np.empty(idx.size, dtype=np.int64)
    j = 0
    for c in iter_cycles(spec, kernel, policy, x, dt, streams, rep, horizon=idx[-1] * dt):
        last = c.end if c.draw is None else c.end - 1
        while j < idx.size and idx[j] <= last:
            values[j] = c.segment.states[idx[j] - c.start]
            cyc[j] = c.index
            j += 1
    return values, cyc


def sample_states(spec, kernel, policy, x0, times: Sequence[float], dt: float, streams,
                  n_reps: int, threads: int = 1):
    """Controlled-path values at grid ``times`` for ``n_reps`` replications.

    ``x0`` is a state or a sequence of states drawn uniformly per replication.
    Paths are not stored. Returns ``(values, cycle_index)``, both ``(n_reps, len(times))``.
    """
    idx = np.array([grid_index(t, dt) for t in times], dtype=np.int64)
    if idx.size == 0 or np.any(np.diff(idx) < 0) or idx[0] < 0:
        raise DomainError("times must be nonempty, nonnegative and sorted")
    args = (spec, kernel, policy, x0, idx, dt, as_streams(streams))
    out = run_replications(_states_worker, args, n_reps, threads)
    return np.array([o[0] for o in out]), np.array([o[1] for o in out])


def _cycles_worker(args, rep):
    spec, kernel, policy, x0, dt, streams, n_cycles, cost, max_steps = args
    x = initial_state(x0, streams, rep)
    lengths = np.empty(n_cycles)
    costs = np.empty(n_cycles)
    prev = None
    k = -1
    for c in iter_cycles(spec, kernel, policy, x, dt, streams, rep, max_cycles=n_cycles,
                         max_steps=max_steps):
        if c.draw is None:
            raise PreconditionError(f"replication {rep}: cycle {c.index} did not fire "
                                    f"within {max_steps} steps")
        k = c.index
        lengths[k] = c.sigma
        if cost is not None:
            costs[k] = cycle_cost(c, prev, cost)
        prev = c.draw
    return lengths, costs


def cycle_matrix(spec, kernel, policy, x0, dt: float, streams, n_reps: int,
                 cycles_per_rep: int, cost=None, threads: int = 1,
                 max_steps: int = DEFAULT_MAX_STEPS):
    """Lengths (and costs) of cycles ``0..cycles_per_rep`` for each replication.

    Returns ``(lengths, costs)`` of shape ``(n_reps, cycles_per_rep + 1)``;
    ``costs`` is None without a cost spec.
    """
    args = (spec, kernel, policy, x0, dt, as_streams(streams), cycles_per_rep + 1, cost, max_steps)
    out = run_replications(_cycles_worker, args, n_reps, threads)
    lengths = np.array([o[0] for o in out])
    costs = np.array([o[1] for o in out]) if cost is not None else None
    return lengths, costs
