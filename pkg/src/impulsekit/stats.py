"""Hypothesis tests for the structural claims about controlled paths.

Two claims are checked empirically: cycles ``k >= 1`` are i.i.d., and the
controlled process is Markov. Both checks are necessary-condition tests at a
finite resolution; a fail-to-reject supports the claim at that resolution
only. Calibration helpers measure rejection rates on synthetic nulls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DomainError

REJECT = "reject"
FAIL_TO_REJECT = "fail-to-reject"
MIN_KS_SIZE = 20


@dataclass(frozen=True)
class TestReport:
    """Outcome of one hypothesis test; ``verdict`` is derived from ``p_value < alpha``."""

    __test__ = False  # not a pytest class

    test_name: str
    statistic: float
    p_value: float
    alpha: float
    sample_sizes: tuple
    notes: tuple = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        p = float(self.p_value)
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"p-value {p} outside [0, 1]")
        object.__setattr__(self, "p_value", p)
        object.__setattr__(self, "statistic", float(self.statistic))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "notes", tuple(self.notes))

    @property
    def verdict(self) -> str:
        return REJECT if self.p_value < self.alpha else FAIL_TO_REJECT

    @property
    def rejected(self) -> bool:
        return self.verdict == REJECT

    def to_dict(self) -> dict:
        return {
            "test_name": self.test_name,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "verdict": self.verdict,
            "sample_sizes": list(self.sample_sizes),
            "notes": list(self.notes),
            "extra": self.extra,
        }


def format_reports(reports: Sequence[TestReport]) -> str:
    """Aligned text table of reports."""
    header = ("test", "statistic", "p_value", "alpha", "verdict", "n")
    rows = [(r.test_name, f"{r.statistic:.6g}", f"{r.p_value:.6g}", f"{r.alpha:g}", r.verdict,
             "x".join(str(n) for n in r.sample_sizes)) for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(row, widths)) for row in (header, *rows)]
    return "\n".join(lines)


# -- identical distribution -------------------------------------------------

def ks_two_sample(a, b, alpha: float = 0.05, name: str = "ks-two-sample") -> TestReport:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < MIN_KS_SIZE or b.size < MIN_KS_SIZE:
        raise DomainError(f"KS needs at least {MIN_KS_SIZE} points per sample, "
                          f"got {a.size} and {b.size}")
    res = stats.ks_2samp(a, b, method="asymp")
    return TestReport(name, res.statistic, min(max(res.pvalue, 0.0), 1.0), alpha, (a.size, b.size))


# -- independence -------------------------------------------------------------

def _lag1_stat(x: np.ndarray) -> np.ndarray:
    # pooled lag-1 correlation of each row sequence; x has shape (..., R, m)
    c = x - x.mean(axis=(-2, -1), keepdims=True)
    num = (c[..., :-1] * c[..., 1:]).sum(axis=(-2, -1)) / (c.shape[-2] * (c.shape[-1] - 1))
    return num / (c * c).mean(axis=(-2, -1))


def lag1_permutation_test(x, alpha: float = 0.01, permutations: int = 999,
                          rng: Optional[np.random.Generator] = None,
                          name: str = "lag1-permutation", batch: int = 50) -> TestReport:
    """Permutation test of zero lag-1 correlation between consecutive values.

    ``x`` has one row per replication. The null distribution shuffles the
    order within each row independently. Two-sided; ``p = (1 + #{|r*| >= |r|}) / (B + 1)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n_rep, m = x.shape
    if m < 2:
        raise DomainError("need at least two consecutive values per replication")
    rng = np.random.default_rng(0) if rng is None else rng
    if np.ptp(x) == 0.0:
        return TestReport(name, 0.0, 1.0, alpha, (n_rep, m), ("degenerate: constant values",))
    r_obs = float(_lag1_stat(x))
    hits = 0
    done = 0
    while done < permutations:
        b = min(batch, permutations - done)
        stacked = np.broadcast_to(x, (b, n_rep, m))
        perm = rng.permuted(stacked, axis=-1)
        hits += int(np.count_nonzero(np.abs(_lag1_stat(perm)) >= abs(r_obs) - 1e-12))
        done += b
    p = (1 + hits) / (permutations + 1)
    return TestReport(name, r_obs, p, alpha, (n_rep, m), extra={"permutations": permutations})


def pair_permutation_test(a, b, alpha: float = 0.01, permutations: int = 999,
                          rng: Optional[np.random.Generator] = None,
                          name: str = "pair-permutation") -> TestReport:
    """Permutation test of zero correlation between paired samples (shuffles ``b``)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size or a.size < 3:
        raise DomainError("need at least three pairs of equal length")
    rng = np.random.default_rng(0) if rng is None else rng
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return TestReport(name, 0.0, 1.0, alpha, (a.size,), ("degenerate: constant values",))
    ca, cb = a - a.mean(), b - b.mean()
    scale = math.sqrt((ca * ca).sum() * (cb * cb).sum())
    r_obs = float((ca * cb).sum() / scale)
    perm = rng.permuted(np.broadcast_to(cb, (permutations, cb.size)), axis=-1)
    r_perm = perm @ ca / scale
    hits = int(np.count_nonzero(np.abs(r_perm) >= abs(r_obs) - 1e-12))
    return TestReport(name, r_obs, (1 + hits) / (permutations + 1), alpha, (a.size,),
                      extra={"permutations": permutations})


def test_cycles_iid(lengths, costs=None, alpha: float = 0.01,
                    pairs: Optional[Sequence[tuple]] = None, permutations: int = 999,
                    seed: int = 0) -> list[TestReport]:
    """Identical-distribution and independence checks on per-cycle functionals.

    Parameters
    ----------
    lengths : array, shape (R, m + 1)
        Cycle lengths; column ``k`` is cycle ``k`` and column 0 the initial cycle.
    costs : array, optional
        Cycle costs of the same shape; adds KS checks on costs.
    pairs : sequence of (k, k'), optional
        Cycle indices compared by KS, all ``>= 1``. Default ``(1, 2)`` and ``(1, m)``.

    Returns
    -------
    list of TestReport
        KS reports per pair (lengths, then costs), the pooled lag-1
        permutation test over cycles ``1..m`` and, with at least three
        replications, a cycle-0/cycle-1 permutation test.
    """
    lengths = np.atleast_2d(np.asarray(lengths, dtype=float))
    n_rep, width = lengths.shape
    m = width - 1
    if m < 2:
        raise DomainError("need at least two completed cycles per replication")
    if pairs is None:
        pairs = [(1, 2)] if m == 2 else [(1, 2), (1, m)]
    for k1, k2 in pairs:
        if not (1 <= k1 <= m and 1 <= k2 <= m):
            raise DomainError(f"cycle pair {(k1, k2)} outside 1..{m}")
    reports = []
    samples = [("length", lengths)]
    if costs is not None:
        samples.append(("cost", np.atleast_2d(np.asarray(costs, dtype=float))))
    for label, arr in samples:
        for k1, k2 in pairs:
            if n_rep < MIN_KS_SIZE:
                raise DomainError(f"KS by cycle index needs at least {MIN_KS_SIZE} replications")
            reports.append(ks_two_sample(arr[:, k1], arr[:, k2], alpha,
                                         name=f"ks-{label}-cycle{k1}-vs-cycle{k2}"))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    reports.append(lag1_permutation_test(lengths[:, 1:], alpha, permutations, rng,
                                         name="lag1-permutation-cycles1+"))
    if n_rep >= 3:
        rng0 = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
        reports.append(pair_permutation_test(lengths[:, 0], lengths[:, 1], alpha, permutations,
                                             rng0, name="permutation-cycle0-vs-cycle1"))
    return reports


test_cycles_iid.__test__ = False


# -- Markov property -----------------------------------------------------------

def quantile_bins(x, k: int) -> np.ndarray:
    """Codes ``0..k'-1`` (``k' <= k``) of equiprobable bins; by value if few distinct values."""
    x = np.asarray(x, dtype=float)
    uniq, inv = np.unique(x, return_inverse=True)
    if uniq.size <= k:
        return inv.astype(np.int64)
    edges = np.quantile(x, np.linspace(0.0, 1.0, k + 1)[1:-1])
    codes = np.searchsorted(edges, x, side="right")
    _, codes = np.unique(codes, return_inverse=True)
    return codes.astype(np.int64)


def _merge_sparse(table: np.ndarray, min_total: int, axis: int) -> np.ndarray:
    # merge adjacent rows (axis 0) or columns (axis 1) until each total >= min_total
    t = table if axis == 0 else table.T
    groups = [t[i].copy() for i in range(t.shape[0])]
    i = 0
    while i < len(groups) and len(groups) > 1:
        if groups[i].sum() >= min_total:
            i += 1
            continue
        j = i + 1 if i + 1 < len(groups) else i - 1
        groups[min(i, j)] = groups[i] + groups[j]
        del groups[max(i, j)]
        i = min(i, j)
    out = np.array(groups)
    return out if axis == 0 else out.T


def markov_triples(trajectories, s_past: float, s: float, t: float) -> np.ndarray:
    """``(X(s_past), X(s), X(t))`` rows from controlled trajectories."""
    from .controller import evaluate
    return np.array([[evaluate(tr, s_past), evaluate(tr, s), evaluate(tr, t)]
                     for tr in trajectories], dtype=float)


def test_markov(data, s_past: float, s: float, t: float, bins=(8, 4, 4),
                alpha: float = 0.01, min_cell: int = 50, horizon: Optional[float] = None,
                name: str = "markov-chi2-fisher") -> TestReport:
    """Conditional independence of past and future given the present.

    Within each present-bin of ``X(s)`` a chi-square test of independence is
    run between the bin of ``X(s_past)`` and the bin of ``X(t)``; past and
    future bins are equiprobable within the present-bin. Past rows and future
    columns with fewer than ``min_cell`` observations are merged into a
    neighbour. Per-bin p-values are combined by Fisher's method (reported
    p-value); the Bonferroni combination is reported in ``extra``.

    Parameters
    ----------
    data : array (n, 3) or sequence of ControlledTrajectory
    bins : (present, past, future) bin counts
    """
    if not s_past < s < t:
        raise DomainError("need s_past < s < t")
    if horizon is not None and t > horizon + 1e-12:
        raise DomainError(f"t={t} beyond the horizon {horizon}")
    arr = np.asarray(data, dtype=float) if isinstance(data, np.ndarray) else None
    if arr is None:
        arr = markov_triples(data, s_past, s, t)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DomainError("data must be trajectories or an (n, 3) array")
    n = arr.shape[0]
    n_present, n_past, n_future = bins
    resolution = {"bins": list(bins), "times": [s_past, s, t], "min_cell": min_cell}
    if np.ptp(arr[:, 0]) == 0.0 or np.ptp(arr[:, 2]) == 0.0:
        return TestReport(name, 0.0, 1.0, alpha, (n,), ("degenerate: constant past or future",),
                          {"resolution": resolution})
    present = quantile_bins(arr[:, 1], n_present)
    per_bin = []
    notes = []
    sparse = 0
    for b in range(int(present.max()) + 1):
        sel = present == b
        past, future = arr[sel, 0], arr[sel, 2]
        if np.ptp(past) == 0.0 or np.ptp(future) == 0.0:
            notes.append(f"present-bin {b}: degenerate, skipped")
            continue
        pc = quantile_bins(past, n_past)
        fc = quantile_bins(future, n_future)
        table = np.zeros((pc.max() + 1, fc.max() + 1))
        np.add.at(table, (pc, fc), 1.0)
        shape0 = table.shape
        table = _merge_sparse(_merge_sparse(table, min_cell, 0), min_cell, 1)
        if table.shape != shape0:
            notes.append(f"present-bin {b}: merged {shape0[0]}x{shape0[1]} -> "
                         f"{table.shape[0]}x{table.shape[1]}")
        if min(table.shape) < 2 or table.sum(axis=1).min() < min_cell \
                or table.sum(axis=0).min() < min_cell:
            notes.append(f"present-bin {b}: too sparse after merging, skipped")
            sparse += 1
            continue
        chi2, p, dof, _ = stats.chi2_contingency(table, correction=False)
        per_bin.append({"bin": b, "n": int(sel.sum()), "chi2": float(chi2), "dof": int(dof),
                        "p_value": float(p)})
    if not per_bin:
        if sparse:
            raise DomainError(f"too few observations ({n}) for bins {tuple(bins)} "
                              f"with min_cell={min_cell}")
        return TestReport(name, 0.0, 1.0, alpha, (n,), ("degenerate: no testable present-bin",
                                                        *notes), {"resolution": resolution})
    pvals = np.array([r["p_value"] for r in per_bin])
    fisher_stat, fisher_p = stats.combine_pvalues(pvals, method="fisher")
    bonferroni = float(min(1.0, pvals.size * pvals.min()))
    return TestReport(name, fisher_stat, float(fisher_p), alpha, (n,), tuple(notes),
                      {"bonferroni_p": bonferroni, "per_bin": per_bin, "resolution": resolution})


test_markov.__test__ = False


# -- calibration -----------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    rejections: int
    n: int
    alpha: float
    lower: float
    upper: float

    @property
    def rate(self) -> float:
        return self.rejections / self.n

    @property
    def ok(self) -> bool:
        return self.lower <= self.rate <= self.upper

    def to_dict(self) -> dict:
        return {"rejections": self.rejections, "n": self.n, "alpha": self.alpha,
                "rate": self.rate, "lower": self.lower, "upper": self.upper, "ok": self.ok}


def binomial_bounds(n: int, p: float, level: float = 0.99) -> tuple[float, float]:
    """Central ``level`` interval for the rate of a Binomial(n, p) count."""
    lo, hi = stats.binom.interval(level, n, p)
    return float(lo) / n, float(hi) / n


def calibrate(run: Callable[[np.random.Generator], TestReport], n: int, alpha: float,
              seed: int = 0, level: float = 0.99) -> Calibration:
    """Rejection rate of ``run`` over ``n`` repetitions, with binomial bounds at ``alpha``."""
    if n < 1:
        raise DomainError("need at least one repetition")
    root = np.random.SeedSequence(seed)
    hits = 0
    for child in root.spawn(n):
        rep = run(np.random.default_rng(child))
        hits += rep.p_value < alpha
    lo, hi = binomial_bounds(n, alpha, level)
    return Calibration(int(hits), n, alpha, lo, hi)


def synthetic_iid_cycles(rng: np.random.Generator, n_reps: int, m: int) -> np.ndarray:
    """i.i.d. Gamma(2, 1) cycle lengths, shape ``(n_reps, m + 1)``."""
    return rng.gamma(2.0, 1.0, size=(n_reps, m + 1))


def random_transition_matrix(rng: np.random.Generator, n_states: int) -> np.ndarray:
    P = rng.dirichlet(np.ones(n_states), size=n_states)
    return P / P.sum(axis=1, keepdims=True)


def synthetic_markov_triples(rng: np.random.Generator, n: int, P: np.ndarray,
                             steps=(1, 3, 5)) -> np.ndarray:
    """Observations ``(X_a, X_b, X_c)`` of a finite Markov chain started uniformly."""
    a, b, c = steps
    if not 0 <= a < b < c:
        raise DomainError("need 0 <= a < b < c")
    n_states = P.shape[0]
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    x = rng.integers(n_states, size=n)
    out = np.empty((n, 3))
    for step in range(c + 1):
        if step in (a, b, c):
            out[:, (a, b, c).index(step)] = x
        u = rng.random(n)
        x = (u[:, None] > cdf[x]).sum(axis=1)
    return out


def synthetic_lag_dependent(rng: np.random.Generator, n_reps: int, m: int,
                            rho: float = 0.3) -> np.ndarray:
    """AR(1) rows with lag-1 correlation ``rho``; an alternative for power checks."""
    z = rng.standard_normal((n_reps, m + 1))
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    for j in range(1, m + 1):
        x[:, j] = rho * x[:, j - 1] + math.sqrt(1 - rho * rho) * z[:, j]
    return x
