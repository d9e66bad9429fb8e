"""Exact laws of a lattice version of the controlled process.

The fundamental diffusion is replaced by a trinomial chain on a uniform
grid, and the cycle-by-cycle construction is carried out literally on
probability vectors: propagate with ``P``, route mass that arrives in the
stopping set through ``Q[y]`` and advance its cycle index. Everything is
small dense linear algebra, so results are exact up to rounding.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ConsistencyError, DomainError
from .impulse import ImpulseKernel, deterministic
from .policy import StopRule

MAX_STATES = 200
PROB_TOL = 1e-12
MASS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LatticeModel:
    """Trinomial chain plus stop set and impulse routing on a uniform grid.

    Attributes
    ----------
    grid : (n,) array
    step : float
        Time per transition.
    P : (n, n) array
        Row-stochastic transition matrix of the uncontrolled chain.
    stop_set : (n,) bool array
        States in which an arriving path fires.
    Q : (n, n) array
        Row ``i``: law of the post-impulse state when firing at ``grid[i]``.
    """

    grid: np.ndarray
    step: float
    P: np.ndarray
    stop_set: np.ndarray
    Q: np.ndarray

    @property
    def n(self) -> int:
        return self.grid.size

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def index_of(self, x: float) -> int:
        i = int(np.argmin(np.abs(self.grid - x)))
        if abs(self.grid[i] - x) > 1e-9 * max(1.0, abs(x)):
            raise DomainError(f"state {x} is not on the lattice")
        return i


def _uniform_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ConfigError("oracle.grid", "need at least two grid points")
    if grid.size > MAX_STATES:
        raise ConfigError("oracle.grid", f"at most {MAX_STATES} states, got {grid.size}")
    d = np.diff(grid)
    if d.min() <= 0 or np.ptp(d) > 1e-9 * d.mean():
        raise ConfigError("oracle.grid", "grid must be increasing and uniformly spaced")
    return grid


def transition_matrix(spec, grid, step: float) -> np.ndarray:
    """Locally consistent trinomial chain for ``spec`` on ``grid``.

    One-step mean ``drift * step`` and variance ``diffusion**2 * step``
    exactly at interior states. Moves off the grid go to the mirror state
    under reflection and stay put otherwise; absorbing bound states are
    absorbing.
    """
    grid = _uniform_grid(grid)
    if not step > 0:
        raise ConfigError("oracle.step", "step must be positive")
    n = grid.size
    dx = grid[1] - grid[0]
    P = np.zeros((n, n))
    lo, hi = spec.bounds
    for i, x in enumerate(grid):
        if spec.bound_mode == "absorb" and (x <= lo or x >= hi):
            P[i, i] = 1.0
            continue
        mu, sig = float(spec.drift(x)), float(spec.diffusion(x))
        m = mu * step / dx
        v = (sig * sig * step + mu * mu * step * step) / (dx * dx)
        p_up, p_down, p_stay = (v + m) / 2, (v - m) / 2, 1.0 - v
        for name, p in (("p_up", p_up), ("p_down", p_down), ("p_stay", p_stay)):
            if p < -PROB_TOL or p > 1 + PROB_TOL:
                raise ConfigError("oracle.step",
                                  f"{name}={p:.6g} outside [0, 1] at state {x:.6g}; "
                                  "reduce the step or widen the grid spacing")
        p_up, p_down, p_stay = (min(max(p, 0.0), 1.0) for p in (p_up, p_down, p_stay))
        up = i + 1 if i + 1 < n else (i - 1 if spec.bound_mode == "reflect" else i)
        down = i - 1 if i > 0 else (i + 1 if spec.bound_mode == "reflect" else i)
        P[i, i] += p_stay
        P[i, up] += p_up
        P[i, down] += p_down
    P /= P.sum(axis=1, keepdims=True)
    return P


def _stop_indicator(rule: Optional[StopRule], grid: np.ndarray, step: float) -> np.ndarray:
    if rule is None:
        return np.zeros(grid.size, dtype=bool)
    if rule.kind not in ("hit-lower", "exit-interval"):
        raise DomainError(f"stop rule {rule.kind!r} is not a function of the current state")
    return np.array([rule.fires(np.array([x]), 0, step) for x in grid], dtype=bool)


def _routing_matrix(kernel: ImpulseKernel, target, grid: np.ndarray, stop: np.ndarray,
                    lattice_index) -> np.ndarray:
    n = grid.size
    Q = np.eye(n)
    for i in np.flatnonzero(stop):
        y = grid[i]
        z = float(target(y))
        if kernel.kind == "deterministic":
            Q[i] = 0.0
            Q[i, lattice_index(kernel.clamp(z))] = 1.0
        elif kernel.kind == "custom-table":
            support, probs = kernel.table_at(y)
            Q[i] = 0.0
            for v, p in zip(support, probs):
                Q[i, lattice_index(kernel.clamp(float(v)))] += p
        else:
            raise DomainError(f"impulse kernel {kernel.kind!r} has no lattice form; "
                              "use deterministic or custom-table")
    return Q


def build_lattice(spec, grid, step: float, rule: Optional[StopRule] = None, target=None,
                  kernel: Optional[ImpulseKernel] = None) -> LatticeModel:
    """Lattice model of ``spec`` with stop rule ``rule`` and impulse routing.

    ``target`` maps the pre-impulse grid state to the nominal impulse and
    ``kernel`` realizes it (default deterministic). Without a rule the model
    never intervenes.
    """
    grid = _uniform_grid(grid)
    P = transition_matrix(spec, grid, step)
    stop = _stop_indicator(rule, grid, step)
    if stop.any() and target is None:
        raise DomainError("a stop rule needs a target map")
    kernel = deterministic() if kernel is None else kernel
    model = LatticeModel(grid, float(step), P, stop, np.eye(grid.size))
    Q = _routing_matrix(kernel, target, grid, stop, model.index_of)
    if np.abs(Q.sum(axis=1) - 1.0).max() > PROB_TOL or Q.min() < 0:
        raise ConsistencyError("routing rows must be probability vectors")
    return LatticeModel(grid, float(step), P, stop, Q)


@dataclass(frozen=True, eq=False)
class ControlledLaw:
    """Exact finite-horizon law of the lattice controlled chain.

    Attributes
    ----------
    marginals : (n_steps + 1, n, k_max + 1) array
        ``marginals[t, i, k]`` = P(X_t = grid[i], t in cycle k).
    cycle_length_pmf : (k_max + 1, max_length + 1) array
        ``pmf[k, L]`` = P(cycle k lasts L steps | cycle k starts), for
        ``L <= max_length``; earlier cycles enter through their first
        ``max_length`` steps only.
    overflow : (n_steps + 1,) array
        Mass whose cycle ``k_max`` has ended by each time: it would have
        started cycle ``k_max + 1`` and instead keeps evolving unrouted.
    unfinished : (k_max + 1,) array
        P(cycle k lasts longer than ``max_length`` | cycle k starts).
    """

    grid: np.ndarray
    step: float
    marginals: np.ndarray
    cycle_length_pmf: np.ndarray
    overflow: np.ndarray
    unfinished: np.ndarray
    start_laws: np.ndarray = field(repr=False, default=None)

    @property
    def k_max(self) -> int:
        return self.marginals.shape[2] - 1

    def state_marginal(self, t_index: int) -> np.ndarray:
        return self.marginals[t_index].sum(axis=1)

    def to_csv(self, path, times=None) -> None:
        """Rows ``(time, state, cycle_index, probability)`` for nonzero cells."""
        idx = range(self.marginals.shape[0]) if times is None else times
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "state", "cycle_index", "probability"])
            for t in idx:
                for i, k in zip(*np.nonzero(self.marginals[t])):
                    w.writerow([f"{t * self.step:.12g}", f"{self.grid[i]:.12g}", int(k),
                                f"{self.marginals[t, i, k]:.12g}"])


def first_passage(model: LatticeModel, start: np.ndarray, max_length: int):
    """Sub-stochastic propagation of ``start`` until arrival in the stop set.

    Returns ``(exits, remaining)``: ``exits[L]`` is the mass vector over
    states arriving in the stop set at step ``L`` (row 0 is zero; a path
    starting inside the set must move first), ``remaining`` the mass still
    running after ``max_length`` steps.
    """
    live = np.asarray(start, dtype=float).copy()
    exits = np.zeros((max_length + 1, model.n))
    for L in range(1, max_length + 1):
        live = live @ model.P
        exits[L] = np.where(model.stop_set, live, 0.0)
        live = np.where(model.stop_set, 0.0, live)
    return exits, live


def _delta(model: LatticeModel, x0: float) -> np.ndarray:
    e = np.zeros(model.n)
    e[model.index_of(x0)] = 1.0
    return e


def cycle_laws(model: LatticeModel, x0: float, k_max: int, max_length: int):
    """Per-cycle start laws and length pmfs by composing first passage with routing.

    Returns ``(start_laws, pmf, unfinished)``. ``start_laws[k]`` is the
    law of the state starting cycle ``k`` given that it starts, and the pmf
    and unfinished mass are conditional on the same event. Earlier cycles
    that outlast ``max_length`` drop out of the conditioning.
    """
    starts = np.zeros((k_max + 1, model.n))
    pmf = np.zeros((k_max + 1, max_length + 1))
    unfinished = np.zeros(k_max + 1)
    starts[0] = _delta(model, x0)
    for k in range(k_max + 1):
        exits, _ = first_passage(model, starts[k], max_length)
        pmf[k] = exits.sum(axis=1)
        unfinished[k] = max(0.0, 1.0 - pmf[k].sum())
        if k < k_max:
            nxt = exits.sum(axis=0) @ model.Q
            mass = nxt.sum()
            if mass <= 0.0:
                raise DomainError(f"cycle {k} never ends within {max_length} steps")
            starts[k + 1] = nxt / mass
    return starts, pmf, unfinished


def compose_controlled_marginal(model: LatticeModel, x0: float, n_steps: int, k_max: int,
                                max_length: Optional[int] = None) -> ControlledLaw:
    """Exact law of the controlled lattice chain up to ``n_steps`` transitions.

    Each step propagates every cycle layer with ``P``; mass arriving in the
    stop set moves to the next layer through ``Q``. Layer ``k_max`` is not
    routed: mass that fires there keeps evolving under ``P`` without further
    stops and is reported in ``overflow``. ``k_max = 0`` therefore gives
    plain ``P^n``.
    """
    if n_steps < 1:
        raise DomainError("n_steps must be at least 1")
    if k_max < 0:
        raise DomainError("k_max must be nonnegative")
    max_length = n_steps if max_length is None else int(max_length)
    n = model.n
    marg = np.zeros((n_steps + 1, n, k_max + 1))
    marg[0, model.index_of(x0), 0] = 1.0
    overflow = np.zeros(n_steps + 1)
    stop = model.stop_set[:, None]
    live = marg[0].copy()
    done = np.zeros(n)  # layer k_max mass whose cycle already ended; never fires again
    for t in range(1, n_steps + 1):
        moved = model.P.T @ live
        fired = np.where(stop, moved, 0.0)
        live = np.where(stop, 0.0, moved)
        if k_max > 0:
            live[:, 1:] += model.Q.T @ fired[:, :-1]
        done = model.P.T @ done + fired[:, k_max]
        overflow[t] = done.sum()
        marg[t] = live
        marg[t, :, k_max] += done
        total = marg[t].sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ConsistencyError(f"mass {total!r} at step {t} differs from 1")
    starts, pmf, unfinished = cycle_laws(model, x0, k_max, max_length)
    return ControlledLaw(model.grid, model.step, marg, pmf, overflow, unfinished, starts)


def joint_cycle_lengths(model: LatticeModel, x0: float, max_length: int,
                        first: int = 1) -> np.ndarray:
    """Exact joint pmf of the lengths of cycles ``first`` and ``first + 1``.

    Mass is tagged with the first cycle's length: for every ``L1`` the exit
    vector at age ``L1`` is routed on its own and run through first passage.
    Entry ``[L1, L2]`` for ``L1, L2 <= max_length``, conditional on cycle
    ``first`` starting. Rows and columns are truncated at ``max_length``, so
    compare against the per-cycle pmfs rather than the table's own sums.
    """
    starts, _, _ = cycle_laws(model, x0, first, max_length)
    exits, _ = first_passage(model, starts[first], max_length)
    joint = np.zeros((max_length + 1, max_length + 1))
    for L1 in range(1, max_length + 1):
        if exits[L1].sum() == 0.0:
            continue
        ex2, _ = first_passage(model, exits[L1] @ model.Q, max_length)
        joint[L1] = ex2.sum(axis=1)
    return joint


def compare_tv(p, q, support_p=None, support_q=None) -> float:
    """Total variation distance ``0.5 * sum |p - q|`` on a shared support."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise DomainError(f"supports differ in size: {p.size} vs {q.size}")
    if support_p is not None or support_q is not None:
        if support_p is None or support_q is None or not np.allclose(support_p, support_q,
                                                                        rtol=0, atol=1e-12):
            raise DomainError("distributions are on different supports")
    return 0.5 * float(np.abs(p - q).sum())


def mc_histogram(values, grid) -> np.ndarray:
    """Empirical pmf over ``grid`` of samples that lie on the grid."""
    values = np.asarray(values, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    idx = np.clip(np.searchsorted(grid, values), 0, grid.size - 1)
    left = np.clip(idx - 1, 0, grid.size - 1)
    idx = np.where(np.abs(grid[left] - values) < np.abs(grid[idx] - values), left, idx)
    scale = max(1.0, float(np.abs(grid).max()))
    if np.abs(grid[idx] - values).max(initial=0.0) > 1e-9 * scale:
        raise DomainError("samples off the lattice")
    return np.bincount(idx, minlength=grid.size) / values.size


def lattice_process_spec(spec, step: float, dx: float):
    """Controller spec whose Euler step reproduces the lattice chain in law.

    Only for the random-walk case ``diffusion**2 * step == dx**2`` with zero
    drift, where the chain moves ``+-dx`` with probability 1/2 each; a
    Rademacher-driven Euler step then has exactly the lattice transition.
    """
    from dataclasses import replace

    from .process import Affine
    if not (isinstance(spec.drift, Affine) and spec.drift.is_zero
            and isinstance(spec.diffusion, Affine) and spec.diffusion.slope == 0.0):
        raise DomainError("exact Monte Carlo matching needs zero drift and constant diffusion")
    if not math.isclose(spec.diffusion.intercept ** 2 * step, dx * dx, rel_tol=1e-12):
        raise DomainError("need diffusion**2 * step == dx**2 for a pure random walk")
    return replace(spec, noise="rademacher")
