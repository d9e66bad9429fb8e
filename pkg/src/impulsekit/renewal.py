"""Long-run average cost by renewal-reward over i.i.d. cycles, and (s,S) search.

Cycle ``k >= 1`` carries the charge for the impulse that started it,
``K + c |V_k - Y_k|``, plus the holding cost ``int h(X) dt`` over the cycle.
The initial cycle is simulated but never enters an estimate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .controller import DEFAULT_MAX_STEPS, DEFAULT_RATE_FRACTION, cycle_cost, iter_cycles
from .errors import DomainError, InadmissiblePolicyError, PreconditionError
from .policy import ss_policy
from .rng import as_streams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearHolding:
    """Holding rate ``coef * x``."""

    coef: float

    def __call__(self, x):
        return self.coef * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class CostSpec:
    K: float = 1.0
    c: float = 0.0
    h: Optional[Callable] = None

    def __post_init__(self):
        if self.K < 0:
            raise DomainError("fixed cost K must be nonnegative")


@dataclass(frozen=True)
class RenewalEstimate:
    mean_cycle_cost: float
    mean_cycle_length: float
    g: float
    ci_low: float
    ci_high: float
    n_cycles: int
    level: float = 0.95
    cycle0: tuple = (math.nan, math.nan)
    warnings: tuple = ()

    @property
    def ci_width(self) -> float:
        return self.ci_high - self.ci_low

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cycle0"] = list(self.cycle0)
        d["warnings"] = list(self.warnings)
        return d


def ratio_estimate(lengths, costs, level: float = 0.95) -> tuple[float, float, float]:
    """Ratio ``sum(costs)/sum(lengths)`` with a delta-method confidence interval.

    The interval uses the residuals ``C - g L``, which accounts for the
    covariance between cycle cost and cycle length.
    """
    lengths = np.asarray(lengths, dtype=float)
    costs = np.asarray(costs, dtype=float)
    n = lengths.size
    if n < 2:
        raise DomainError("need at least two cycles")
    lbar = lengths.mean()
    g = costs.mean() / lbar
    resid = costs - g * lengths
    se = math.sqrt(resid.var(ddof=1) / n) / lbar
    half = stats.norm.ppf(0.5 + level / 2) * se
    return g, g - half, g + half


def estimate_average_cost(spec, kernel, policy, cost: CostSpec, x0: float, n_cycles: int,
                          dt: float, streams, rep: int = 0, level: float = 0.95,
                          rate_cap: Optional[float] = None,
                          max_steps: int = DEFAULT_MAX_STEPS) -> RenewalEstimate:
    """Estimate the long-run average cost from cycles ``1..n_cycles`` of one path."""
    if n_cycles < 30:
        raise DomainError("n_cycles must be at least 30")
    warnings = []
    if not policy.markov or not policy.deterministic_pairs:
        warnings.append("policy lacks a fixed (pre-impulse, target) pair; "
                        "cycles are not guaranteed i.i.d.")
    lengths = np.empty(n_cycles + 1)
    costs = np.empty(n_cycles + 1)
    prev = None
    last = -1
    for c in iter_cycles(spec, kernel, policy, x0, dt, streams, rep,
                         max_cycles=n_cycles + 1, max_steps=max_steps):
        if c.draw is None:
            raise PreconditionError(f"cycle {c.index} did not fire within {max_steps} steps")
        lengths[c.index] = c.sigma
        costs[c.index] = cycle_cost(c, prev, cost)
        prev = c.draw
        last = c.index
    assert last == n_cycles
    cap = DEFAULT_RATE_FRACTION / dt if rate_cap is None else rate_cap
    rate = (n_cycles + 1) / lengths.sum()
    if rate > cap:
        raise InadmissiblePolicyError(
            f"{rate:.6g} interventions per unit time exceeds the cap {cap:.6g}")
    g, lo, hi = ratio_estimate(lengths[1:], costs[1:], level)
    return RenewalEstimate(float(costs[1:].mean()), float(lengths[1:].mean()), float(g),
                           float(lo), float(hi), n_cycles, level,
                           (float(lengths[0]), float(costs[0])), tuple(warnings))


def analytic_pure_drift_cost(mu: float, s: float, S: float, K: float, c: float,
                             h_linear: float) -> float:
    """Exact average cost for depletion at rate ``mu`` under (s,S) with ``h(x) = h_linear x``."""
    if not mu > 0:
        raise DomainError("mu must be positive")
    if not S > s >= 0:
        raise DomainError("need S > s >= 0")
    delta = S - s
    return K * mu / delta + c * mu + h_linear * (S + s) / 2


@dataclass(frozen=True)
class SearchSpace:
    s_range: tuple
    S_range: tuple
    grid: tuple = (1, 16)
    refine_iterations: int = 8
    min_step: float = 0.0

    def __post_init__(self):
        (s_lo, s_hi), (S_lo, S_hi) = self.s_range, self.S_range
        if s_lo > s_hi or S_lo > S_hi:
            raise DomainError("search ranges must be nonempty")
        if not S_hi > s_lo:
            raise DomainError("S-range must lie above the s-range")
        if min(self.grid) < 1:
            raise DomainError("grid sizes must be positive")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    s: float
    S: float
    g: float
    ci_low: float
    ci_high: float
    n_cycles: int


@dataclass(frozen=True)
class OptimizationResult:
    s: float
    S: float
    g: float
    ci_low: float
    ci_high: float
    trace: tuple
    budget_exhausted: bool = False
    tie: bool = False
    converged: bool = False
    final_step: tuple = (0.0, 0.0)

    def to_dict(self) -> dict:
        return {
            "s": self.s, "S": self.S, "g": self.g,
            "ci_low": self.ci_low, "ci_high": self.ci_high,
            "budget_exhausted": self.budget_exhausted, "tie": self.tie,
            "converged": self.converged, "final_step": list(self.final_step),
            "evaluations": len(self.trace),
        }


def _axis(lo, hi, n):
    if n == 1 or lo == hi:
        return np.array([float(lo)]), 0.0
    return np.linspace(lo, hi, n), (hi - lo) / (n - 1)


def optimize_sS(spec, kernel, cost: CostSpec, search: SearchSpace, budget: int, streams,
                n_cycles: int = 30, dt: float = 1e-3, level: float = 0.95,
                x0: Optional[float] = None, max_steps: int = DEFAULT_MAX_STEPS,
                tie_tol: float = 1e-12) -> OptimizationResult:
    """Coarse grid over (s, S) followed by coordinate shrink-step refinement.

    Every sweep (the grid is sweep 0) evaluates its candidates on one common
    random-number family ``streams.child(sweep)``; sweeps use independent
    families and a refinement sweep re-evaluates the incumbent alongside its
    neighbours. A sweep without improvement halves the step. The winner is
    the smallest ``g`` in the whole trace, ties broken by smallest ``(s, S)``.
    """
    streams = as_streams(streams)
    (s_lo, s_hi), (S_lo, S_hi) = search.s_range, search.S_range
    s_axis, step_s = _axis(s_lo, s_hi, search.grid[0])
    S_axis, step_S = _axis(S_lo, S_hi, search.grid[1])
    trace: list[TraceRow] = []
    exhausted = False

    def evaluate_sweep(sweep, cands):
        nonlocal exhausted
        fam = streams.child(sweep)
        rows = []
        for s, S in cands:
            if len(trace) >= budget:
                exhausted = True
                break
            est = estimate_average_cost(spec, kernel, ss_policy(s, S), cost,
                                        S if x0 is None else x0, n_cycles, dt, fam,
                                        level=level, max_steps=max_steps)
            row = TraceRow(sweep, float(s), float(S), est.g, est.ci_low, est.ci_high, n_cycles)
            trace.append(row)
            rows.append(row)
        return rows

    def best_of(rows):
        return min(rows, key=lambda r: (r.g, r.s, r.S))

    grid = [(s, S) for s in s_axis for S in S_axis if S > s]
    if not grid:
        raise DomainError("no grid candidate satisfies S > s")
    rows = evaluate_sweep(0, grid)
    if not rows:
        raise DomainError("budget allows no evaluation")
    best = best_of(rows)
    step_s, step_S = step_s / 2, step_S / 2
    converged = False
    for sweep in range(1, search.refine_iterations + 1):
        if exhausted:
            break
        if max(step_s, step_S) <= search.min_step or (step_s == 0 and step_S == 0):
            converged = True
            break
        cands = [(best.s, best.S)]
        for ds, dS in ((-step_s, 0), (step_s, 0), (0, -step_S), (0, step_S)):
            if ds == 0 and dS == 0:
                continue
            s = min(max(best.s + ds, s_lo), s_hi)
            S = min(max(best.S + dS, S_lo), S_hi)
            if S > s and (s, S) not in cands:
                cands.append((s, S))
        rows = evaluate_sweep(sweep, cands)
        if not rows:
            break
        incumbent = rows[0]
        winner = best_of(rows)
        if winner.g < incumbent.g:
            best = winner
        else:
            best = incumbent
            step_s, step_S = step_s / 2, step_S / 2
    else:
        converged = not exhausted

    g_min = min(r.g for r in trace)
    tied = sorted({(r.s, r.S) for r in trace if r.g <= g_min + tie_tol})
    s_star, S_star = tied[0]
    win = min((r for r in trace if (r.s, r.S) == (s_star, S_star) and r.g <= g_min + tie_tol),
              key=lambda r: r.g)
    if exhausted:
        logger.warning("optimizer budget of %d evaluations exhausted", budget)
    return OptimizationResult(s_star, S_star, win.g, win.ci_low, win.ci_high, tuple(trace),
                              budget_exhausted=exhausted, tie=len(tied) > 1,
                              converged=converged, final_step=(step_s, step_S))
