"""Fundamental diffusion: process definitions, Euler-Maruyama stepping, path segments.

The state space is an interval of the real line. Segments are sampled on a
fixed grid; a segment's ``states[i]`` is the continuous path at elapsed time
``i*dt``. Because the path is continuous, the value at a firing index is also
the left limit there, which is what a stop rule is allowed to read.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _backend, _fallback
from .errors import DomainError, NumericOverflowError, PreconditionError

BOUND_MODES = {"none": _fallback.NONE, "reflect": _fallback.REFLECT, "absorb": _fallback.ABSORB}
NOISE_KINDS = ("gaussian", "rademacher")

# grid snapping tolerance, in units of dt
GRID_TOL = 1e-9
_FIRST_CHUNK = 1024
_MAX_CHUNK = 1 << 16


@dataclass(frozen=True)
class Affine:
    """``x -> intercept + slope * x``; the coefficient form the compiled kernel accepts."""

    intercept: float = 0.0
    slope: float = 0.0

    def __call__(self, x):
        return self.intercept + self.slope * x

    @property
    def is_zero(self) -> bool:
        return self.intercept == 0.0 and self.slope == 0.0


@dataclass(frozen=True)
class ProcessSpec:
    """Drift/diffusion pair of the uncontrolled diffusion.

    Attributes
    ----------
    drift, diffusion : callable
        State -> rate and state -> volatility (per sqrt time). Use
        :class:`Affine` to get the compiled kernel.
    state_lower, state_upper : float or None
        Interval bounds of the state space.
    bound_mode : {"none", "reflect", "absorb"}
    noise : {"gaussian", "rademacher"}
        Law of the per-step increment driver. ``rademacher`` gives the weak
        (random-walk) Euler scheme used to match lattice chains exactly.
    """

    drift: Callable[[float], float]
    diffusion: Callable[[float], float]
    state_lower: Optional[float] = None
    state_upper: Optional[float] = None
    bound_mode: str = "none"
    name: str = "custom"
    noise: str = "gaussian"

    def __post_init__(self):
        if self.bound_mode not in BOUND_MODES:
            raise DomainError(f"unknown bound mode {self.bound_mode!r}")
        if self.noise not in NOISE_KINDS:
            raise DomainError(f"unknown noise kind {self.noise!r}")
        if self.bound_mode != "none" and self.state_lower is None and self.state_upper is None:
            raise DomainError(f"bound mode {self.bound_mode!r} needs at least one bound")
        lo, hi = self.bounds
        if not lo < hi:
            raise DomainError(f"empty state space [{lo}, {hi}]")

    @property
    def bounds(self) -> tuple[float, float]:
        lo = -math.inf if self.state_lower is None else float(self.state_lower)
        hi = math.inf if self.state_upper is None else float(self.state_upper)
        return lo, hi

    @property
    def is_affine(self) -> bool:
        return isinstance(self.drift, Affine) and isinstance(self.diffusion, Affine)

    @property
    def is_deterministic(self) -> bool:
        return isinstance(self.diffusion, Affine) and self.diffusion.is_zero

    def clamp(self, x: float) -> float:
        lo, hi = self.bounds
        return min(max(x, lo), hi)

    def contains(self, x: float) -> bool:
        lo, hi = self.bounds
        return lo <= x <= hi


def drifted_bm(mu: float, sigma: float, **kw) -> ProcessSpec:
    """Brownian motion with drift ``mu`` and volatility ``sigma``."""
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    kw.setdefault("name", "drifted-bm")
    return ProcessSpec(Affine(mu, 0.0), Affine(sigma, 0.0), **kw)


def ou(theta: float, mu: float, sigma: float, **kw) -> ProcessSpec:
    """Ornstein-Uhlenbeck: ``dX = theta (mu - X) dt + sigma dW``."""
    if sigma < 0 or theta < 0:
        raise DomainError("theta and sigma must be nonnegative")
    kw.setdefault("name", "ou")
    return ProcessSpec(Affine(theta * mu, -theta), Affine(sigma, 0.0), **kw)


def gbm(mu: float, sigma: float, **kw) -> ProcessSpec:
    """Geometric Brownian motion, reflected at 0 unless bounds are given."""
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    kw.setdefault("name", "gbm")
    if "state_lower" not in kw and "state_upper" not in kw:
        kw.setdefault("state_lower", 0.0)
        kw.setdefault("bound_mode", "reflect")
    return ProcessSpec(Affine(0.0, mu), Affine(0.0, sigma), **kw)


BUILTIN_SPECS = {
    "drifted-bm": (drifted_bm, ("mu", "sigma")),
    "ou": (ou, ("theta", "mu", "sigma")),
    "gbm": (gbm, ("mu", "sigma")),
}


@dataclass(frozen=True, eq=False)
class PathSegment:
    """Grid sample of one continuous path piece.

    ``offset`` is the elapsed cycle time of ``states[0]`` in grid steps; it is
    zero for freshly sampled segments and grows under :func:`shift`, so rules
    that read the cycle clock see the same clock on a shifted path.
    """

    dt: float
    states: np.ndarray
    truncated: bool = False
    offset: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 1 or states.size == 0:
            raise DomainError("states must be a nonempty 1-d sequence")
        object.__setattr__(self, "states", states)

    def __len__(self):
        return self.states.size

    def __eq__(self, other):
        if not isinstance(other, PathSegment):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.truncated == other.truncated
            and self.offset == other.offset
            and np.array_equal(self.states, other.states)
        )

    @property
    def n_steps(self) -> int:
        return self.states.size - 1

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def initial(self) -> float:
        return float(self.states[0])

    @property
    def final(self) -> float:
        return float(self.states[-1])


def grid_index(t: float, dt: float) -> int:
    """Index of grid time ``t``; raises if ``t`` is not a multiple of ``dt``."""
    q = t / dt
    n = round(q)
    if abs(q - n) > GRID_TOL * max(1.0, abs(q)):
        raise DomainError(f"time {t} is not on the grid of step {dt}")
    return int(n)


def steps_within(t: float, dt: float) -> int:
    """Largest ``n`` with ``n*dt <= t`` (up to grid tolerance)."""
    if math.isinf(t):
        raise DomainError("infinite time has no step count")
    return int(math.floor(t / dt + GRID_TOL))


def _apply_bounds(spec: ProcessSpec, x: float) -> float:
    lo, hi = spec.bounds
    mode = spec.bound_mode
    if mode == "reflect":
        if x < lo:
            x = 2.0 * lo - x
        if x > hi:
            x = 2.0 * hi - x
        if x < lo:
            x = lo
    elif mode == "absorb":
        if x <= lo:
            x = lo
        elif x >= hi:
            x = hi
    return x


def step(spec: ProcessSpec, x: float, dt: float, noise: float) -> float:
    """One Euler-Maruyama step ``x + drift(x) dt + diffusion(x) sqrt(dt) noise``."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    lo, hi = spec.bounds
    if spec.bound_mode == "absorb" and (x <= lo or x >= hi):
        return x
    diff = spec.diffusion(x)
    if diff < 0:
        raise DomainError(f"negative diffusion {diff} at state {x}")
    inc = spec.drift(x) * dt + diff * math.sqrt(dt) * noise
    y = _apply_bounds(spec, x + inc)
    if not math.isfinite(y):
        raise NumericOverflowError(f"non-finite state after stepping from {x}", state=x)
    return y


_ZEROS = np.zeros(_MAX_CHUNK)
_ZEROS.flags.writeable = False


def _draw_noise(spec: ProcessSpec, stream: np.random.Generator, n: int) -> np.ndarray:
    if spec.is_deterministic:
        return _ZEROS[:n]
    if spec.noise == "rademacher":
        return 2.0 * stream.integers(0, 2, size=n) - 1.0
    return stream.standard_normal(n)


def _generic_advance(spec, rule, states, start, end, noise, dt, offset, first_check):
    """Python loop for arbitrary coefficient callables and path-functional rules."""
    lo, hi = spec.bounds
    sqrt_dt = math.sqrt(dt)
    absorb = spec.bound_mode == "absorb"
    x = float(states[start])
    i = start
    for j, i in enumerate(range(start + 1, end + 1)):
        if not (absorb and (x <= lo or x >= hi)):
            diff = spec.diffusion(x)
            if diff < 0.0:
                states[i] = diff
                return i, _fallback.NEGATIVE_DIFFUSION
            inc = spec.drift(x) * dt + diff * sqrt_dt * noise[j]
            x = _apply_bounds(spec, x + inc)
        states[i] = x
        if not math.isfinite(x):
            return i, _fallback.NONFINITE
        if rule is not None and i >= first_check and rule.fires(states[: i + 1], i, dt, offset):
            return i, _fallback.FIRED
    return i, _fallback.RUNNING


def sample_segment(spec: ProcessSpec, x0: float, stop, dt: float, max_time: float,
                   stream: np.random.Generator, *, max_steps: int = 10**8,
                   first_check: int = 1) -> PathSegment:
    """Step from ``x0`` until ``stop`` fires or ``max_time`` elapses.

    The rule is checked at grid indices ``>= first_check`` (default 1: an
    impulse landing inside the stopping set fires one step later at the
    earliest) and only ever sees the prefix ``states[:i+1]``; later states do
    not exist yet when it is asked. ``max_time`` may be ``inf``, in which case
    ``max_steps`` caps the segment.

    Returns a segment whose last state is the value at the firing index, or
    a truncated segment of ``floor(max_time/dt)`` steps.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    if not max_time >= dt * (1 - GRID_TOL):
        raise DomainError("max_time must be at least dt")
    if not spec.contains(x0):
        raise DomainError(f"initial state {x0} outside the state space")
    n_max = max_steps if math.isinf(max_time) else min(steps_within(max_time, dt), max_steps)

    code = stop.kernel_code(dt, 0) if stop is not None else (_fallback.RULE_NONE, 0.0, 0.0)
    use_kernel = spec.is_affine and code is not None
    if use_kernel:
        rule, r0, r1 = code
        lo, hi = spec.bounds
        mode = BOUND_MODES[spec.bound_mode]
        a0, a1 = float(spec.drift.intercept), float(spec.drift.slope)
        b0, b1 = float(spec.diffusion.intercept), float(spec.diffusion.slope)
        sqrt_dt = math.sqrt(dt)

    chunk = _FIRST_CHUNK if not spec.is_deterministic else 8 * _FIRST_CHUNK
    buf = np.empty(min(n_max, chunk) + 1)
    buf[0] = x0
    pos = 0
    while True:
        m = min(chunk, n_max - pos)
        noise = _draw_noise(spec, stream, m)
        if buf.size < pos + m + 1:
            grown = np.empty(max(pos + m + 1, 2 * buf.size))
            grown[: pos + 1] = buf[: pos + 1]
            buf = grown
        if use_kernel:
            idx, status = _backend.advance(buf, pos, pos + m, noise, a0, a1, b0, b1, dt, sqrt_dt,
                                           mode, lo, hi, rule, r0, r1, first_check)
        else:
            idx, status = _generic_advance(spec, stop, buf, pos, pos + m, noise, dt, 0, first_check)
        if status == _fallback.FIRED:
            return PathSegment(dt, buf[: idx + 1].copy(), truncated=False)
        if status == _fallback.NONFINITE:
            raise NumericOverflowError(
                f"non-finite state after stepping from {buf[idx - 1]!r} at step {idx}",
                state=float(buf[idx - 1]))
        if status == _fallback.NEGATIVE_DIFFUSION:
            raise DomainError(f"negative diffusion {buf[idx]} at state {buf[idx - 1]}")
        pos += m
        if pos >= n_max:
            return PathSegment(dt, buf[: pos + 1].copy(), truncated=True)
        chunk = min(2 * chunk, _MAX_CHUNK)


def shift(segment: PathSegment, u: float) -> PathSegment:
    """Shift operator: the sub-segment starting at elapsed time ``u``."""
    j = grid_index(u, segment.dt)
    if j < 0 or j > segment.n_steps:
        raise DomainError(f"shift {u} outside [0, {segment.duration}]")
    if j == 0:
        return segment
    return PathSegment(segment.dt, segment.states[j:], segment.truncated, segment.offset + j)
