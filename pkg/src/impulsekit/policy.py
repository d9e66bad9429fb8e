"""Nominal impulse policies: cycle-local stop rules plus a target map.

A stop rule is a predicate evaluated at grid index ``i`` of the current
cycle's segment. It may read ``states[:i+1]``: the strict past plus the
left limit at ``i`` (the continuous segment's value there). It never sees
the post-impulse value, which lives in the next cycle's segment. The firing
index is the first ``i >= 1`` at which the predicate holds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import _fallback
from .errors import DomainError, PreconditionError
from .process import GRID_TOL, PathSegment, grid_index, shift

STOP_KINDS = ("hit-lower", "exit-interval", "fixed-duration", "path-functional")


def _doubling_first_visit(states, i, dt, offset, level):
    # fires at twice the cycle-clock time of the first visit to `level`
    hits = np.flatnonzero(states[: i + 1] <= level)
    if hits.size == 0:
        return False
    return offset + i == 2 * (offset + int(hits[0]))


def _look_ahead_final(states, i, dt, offset, threshold):
    # reads the end of whatever path it is handed: not adapted
    return bool(states[-1] > threshold)


PATH_FUNCTIONALS: dict[str, Callable] = {
    "doubling-first-visit": _doubling_first_visit,
    "look-ahead-final": _look_ahead_final,
}


def register_path_functional(name: str, fn: Callable) -> None:
    """Register ``fn(states, i, dt, offset, *params) -> bool`` under ``name``."""
    PATH_FUNCTIONALS[name] = fn


def _duration_steps(T: float, dt: float) -> int:
    return max(1, int(math.ceil(T / dt - GRID_TOL)))


@dataclass(frozen=True)
class StopRule:
    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise DomainError(f"unknown stop rule kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(self.params))
        if self.kind == "exit-interval":
            a, b = self.params
            if not a < b:
                raise DomainError("exit-interval needs a < b")
        elif self.kind == "fixed-duration":
            (T,) = self.params
            if not T > 0:
                raise DomainError("fixed-duration needs T > 0")
        elif self.kind == "hit-lower":
            (_,) = self.params
        elif self.kind == "path-functional":
            if not self.params or self.params[0] not in PATH_FUNCTIONALS:
                raise DomainError(f"unknown path functional {self.params[:1]!r}")

    @property
    def builtin(self) -> bool:
        return self.kind != "path-functional"

    def kernel_code(self, dt: float, offset: int = 0):
        """``(rule, r0, r1)`` for the stepping kernel, or None if it needs the path."""
        if self.kind == "hit-lower":
            return _fallback.RULE_HIT_LOWER, float(self.params[0]), 0.0
        if self.kind == "exit-interval":
            return _fallback.RULE_EXIT, float(self.params[0]), float(self.params[1])
        if self.kind == "fixed-duration":
            return _fallback.RULE_FIXED, float(_duration_steps(self.params[0], dt) - offset), 0.0
        return None

    def fires(self, states, i: int, dt: float, offset: int = 0) -> bool:
        if self.kind == "hit-lower":
            return bool(states[i] <= self.params[0])
        if self.kind == "exit-interval":
            a, b = self.params
            return bool(states[i] <= a or states[i] >= b)
        if self.kind == "fixed-duration":
            return offset + i >= _duration_steps(self.params[0], dt)
        fn = PATH_FUNCTIONALS[self.params[0]]
        return bool(fn(states, i, dt, offset, *self.params[1:]))


def hit_lower(level: float) -> StopRule:
    return StopRule("hit-lower", (float(level),))


def exit_interval(a: float, b: float) -> StopRule:
    return StopRule("exit-interval", (float(a), float(b)))


def fixed_duration(T: float) -> StopRule:
    return StopRule("fixed-duration", (float(T),))


def path_functional(name: str, *params) -> StopRule:
    return StopRule("path-functional", (name, *params))


@dataclass(frozen=True)
class ConstantTarget:
    level: float

    def __call__(self, y):
        return self.level


@dataclass(frozen=True)
class IdentityTarget:
    def __call__(self, y):
        return y


@dataclass(frozen=True)
class ShiftTarget:
    delta: float

    def __call__(self, y):
        return y + self.delta


@dataclass(frozen=True)
class PolicySpec:
    """Markov nominal impulse policy (or a declared non-Markov one).

    ``sigma`` is one rule reused every cycle or a per-cycle sequence whose last
    entry repeats. ``target`` maps the pre-impulse state to the nominal impulse.
    """

    sigma: Union[StopRule, tuple]
    target: Callable[[float], float]
    markov: bool = True
    name: str = "policy"

    def __post_init__(self):
        if not isinstance(self.sigma, StopRule):
            rules = tuple(self.sigma)
            if not rules or not all(isinstance(r, StopRule) for r in rules):
                raise DomainError("sigma must be a StopRule or a nonempty sequence of them")
            object.__setattr__(self, "sigma", rules)

    def rule_for_cycle(self, k: int, x0: Optional[float] = None,
                       prev_sigma: Optional[float] = None) -> StopRule:
        if isinstance(self.sigma, StopRule):
            return self.sigma
        return self.sigma[min(k, len(self.sigma) - 1)]

    @property
    def deterministic_pairs(self) -> bool:
        """True when every cycle has the same (pre-impulse, target) pair up to overshoot."""
        return (isinstance(self.sigma, StopRule) and self.sigma.kind == "hit-lower"
                and isinstance(self.target, ConstantTarget))


def ss_policy(s: float, S: float) -> PolicySpec:
    """Order up to ``S`` when the state falls to ``s``."""
    if not s < S:
        raise DomainError(f"(s,S) policy needs s < S, got s={s}, S={S}")
    return PolicySpec(hit_lower(s), ConstantTarget(float(S)), markov=True, name=f"sS({s},{S})")


CORRUPTIONS = ("initial-position", "previous-cycle")


@dataclass(frozen=True)
class NonMarkovProbe:
    """A hit-lower policy whose threshold leaks information from outside the cycle.

    ``initial-position``: level + strength * X(0), every cycle.
    ``previous-cycle``: level - strength * (previous cycle length), cycles k >= 1.
    """

    base: PolicySpec
    corruption: str
    strength: float = 0.3
    markov: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.corruption not in CORRUPTIONS:
            raise DomainError(f"unknown corruption {self.corruption!r}")
        if not (isinstance(self.base.sigma, StopRule) and self.base.sigma.kind == "hit-lower"):
            raise DomainError("probes corrupt a single hit-lower rule")

    @property
    def name(self) -> str:
        return f"probe[{self.corruption}]({self.base.name})"

    @property
    def target(self):
        return self.base.target

    @property
    def deterministic_pairs(self) -> bool:
        return False

    def rule_for_cycle(self, k: int, x0: Optional[float] = None,
                       prev_sigma: Optional[float] = None) -> StopRule:
        level = self.base.sigma.params[0]
        if self.corruption == "initial-position":
            return hit_lower(level + self.strength * float(x0))
        if k == 0 or prev_sigma is None:
            return self.base.sigma
        return hit_lower(level - self.strength * float(prev_sigma))


def should_stop(rule: StopRule, path_prefix: PathSegment, u_index: int) -> bool:
    """Whether ``rule`` holds at grid index ``u_index`` of ``path_prefix``.

    Only ``states[:u_index+1]`` is passed to the rule.
    """
    if not 0 <= u_index < len(path_prefix):
        raise DomainError(f"u_index {u_index} outside the path")
    return rule.fires(path_prefix.states[: u_index + 1], u_index, path_prefix.dt, path_prefix.offset)


def first_firing(rule: StopRule, path: PathSegment, start: int = 1) -> Optional[int]:
    """First index ``>= start`` at which ``rule`` holds on ``path``, or None."""
    states = path.states
    if start >= states.size:
        return None
    if rule.kind == "hit-lower":
        hits = np.flatnonzero(states[start:] <= rule.params[0])
    elif rule.kind == "exit-interval":
        a, b = rule.params
        tail = states[start:]
        hits = np.flatnonzero((tail <= a) | (tail >= b))
    elif rule.kind == "fixed-duration":
        n = max(_duration_steps(rule.params[0], path.dt) - path.offset, start)
        return n if n < states.size else None
    else:
        for i in range(start, states.size):
            if rule.fires(states, i, path.dt, path.offset):
                return i
        return None
    return int(hits[0]) + start if hits.size else None


def check_terminal_time(rule: StopRule, path: PathSegment, u: float) -> bool:
    """Check ``sigma(path) == sigma(shift(path, u)) + u`` exactly on the grid.

    Raises PreconditionError if the rule fired at or before ``u``.
    """
    j = grid_index(u, path.dt)
    sigma = first_firing(rule, path)
    if sigma is not None and sigma <= j:
        raise PreconditionError(f"rule fired at step {sigma}, not after u={u}")
    shifted_sigma = first_firing(rule, shift(path, u))
    if sigma is None or shifted_sigma is None:
        return sigma is None and shifted_sigma is None
    return sigma == shifted_sigma + j


def check_path_consistency(rule: StopRule, path1: PathSegment, path2: PathSegment) -> bool:
    """Stopping-time consistency for a pair of paths.

    If ``path2`` agrees with ``path1`` on everything the decision at
    ``sigma(path1)`` may read (indices before it plus the left limit at it),
    the rule must fire at the same index on both. Pairs that do not agree
    satisfy the implication vacuously.
    """
    if path1.dt != path2.dt or path1.offset != path2.offset:
        raise DomainError("paths must share dt and clock offset")
    sigma1 = first_firing(rule, path1)
    n = path1.states.size if sigma1 is None else sigma1 + 1
    if path2.states.size < n or not np.array_equal(path1.states[:n], path2.states[:n]):
        return True
    sigma2 = first_firing(rule, path2)
    if sigma1 is None:
        # path1 never fired on its window; path2 may not fire inside that window
        return sigma2 is None or sigma2 >= path1.states.size
    return sigma2 == sigma1


def nominal_target(policy, y: float) -> float:
    if not math.isfinite(y):
        raise DomainError(f"pre-impulse state {y} is not finite")
    return float(policy.target(y))
