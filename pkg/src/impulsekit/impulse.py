"""Uncertain impulse mechanism: post-impulse state laws Q(y, z).

Nominal impulses are target states: the decision maker at ``y`` aims for
``z`` and lands at ``v ~ Q(y, z)``. Draws are clamped to the state-space
bounds carried by the kernel, so ``v`` always lies in the state space.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .errors import DomainError, NotAvailableError

KERNEL_KINDS = ("deterministic", "partial-fraction", "additive-noise", "custom-table", "callable")
_PROB_TOL = 1e-12


@dataclass(frozen=True)
class ImpulseDraw:
    y: float
    z: float
    v: float


@dataclass(frozen=True)
class ImpulseKernel:
    """A family Q(y, z) of post-impulse laws.

    params by kind:

    * ``deterministic``: none; ``v = z``.
    * ``partial-fraction``: ``(u_lo, u_hi)``; ``v = y + U (z - y)``,
      ``U ~ Uniform(u_lo, u_hi)`` (partial delivery of an order).
    * ``additive-noise``: ``(s,)``; ``v = z + N(0, s^2)``.
    * ``custom-table``: ``tables``, a tuple of ``(y_knot, values, probs)``.
      One table means Q ignores (y, z); several are mixed linearly in y
      between neighbouring knots.
    * ``callable``: ``(fn,)`` with ``fn(y, z, generator) -> v``; no moments.
    """

    kind: str
    params: tuple = ()
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise DomainError(f"unknown impulse kernel kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(self.params))
        p = self.params
        if self.kind == "partial-fraction":
            if len(p) != 2 or not p[0] <= p[1]:
                raise DomainError("partial-fraction needs (u_lo, u_hi) with u_lo <= u_hi")
        elif self.kind == "additive-noise":
            if len(p) != 1 or not p[0] >= 0:
                raise DomainError("additive-noise needs (s,) with s >= 0")
        elif self.kind == "custom-table":
            if not p:
                raise DomainError("custom-table needs at least one table")
            tables = []
            for y_knot, values, probs in p:
                values = tuple(float(v) for v in values)
                probs = tuple(float(q) for q in probs)
                if len(values) != len(probs) or not values:
                    raise DomainError("table values and probabilities must match and be nonempty")
                if min(probs) < 0 or abs(math.fsum(probs) - 1.0) > _PROB_TOL:
                    raise DomainError("table probabilities must be nonnegative and sum to 1")
                tables.append((float(y_knot), values, probs))
            tables.sort(key=lambda t: t[0])
            object.__setattr__(self, "params", tuple(tables))
        elif self.kind == "callable":
            if len(p) != 1 or not callable(p[0]):
                raise DomainError("callable kernel needs (fn,)")
        lo, hi = self.bounds
        if not lo < hi:
            raise DomainError("empty state space")

    @property
    def bounds(self) -> tuple[float, float]:
        lo = -math.inf if self.lower is None else float(self.lower)
        hi = math.inf if self.upper is None else float(self.upper)
        return lo, hi

    def clamp(self, v: float) -> float:
        lo, hi = self.bounds
        return min(max(v, lo), hi)

    def with_bounds(self, lower, upper) -> "ImpulseKernel":
        return ImpulseKernel(self.kind, self.params, lower, upper)

    def table_at(self, y: float) -> tuple[np.ndarray, np.ndarray]:
        """Support and probabilities of the (interpolated) table at ``y``."""
        if self.kind != "custom-table":
            raise DomainError("only custom-table kernels have tables")
        tables = self.params
        knots = [t[0] for t in tables]
        if len(tables) == 1 or y <= knots[0]:
            _, v, p = tables[0]
            return np.array(v), np.array(p)
        if y >= knots[-1]:
            _, v, p = tables[-1]
            return np.array(v), np.array(p)
        j = int(np.searchsorted(knots, y, side="right"))
        (ya, va, pa), (yb, vb, pb) = tables[j - 1], tables[j]
        w = (y - ya) / (yb - ya)
        support = np.array(sorted(set(va) | set(vb)))
        probs = np.zeros(support.size)
        probs[np.searchsorted(support, va)] += (1.0 - w) * np.array(pa)
        probs[np.searchsorted(support, vb)] += w * np.array(pb)
        return support, probs


def deterministic(lower=None, upper=None) -> ImpulseKernel:
    return ImpulseKernel("deterministic", (), lower, upper)


def partial_fraction(u_lo: float, u_hi: float, lower=None, upper=None) -> ImpulseKernel:
    return ImpulseKernel("partial-fraction", (float(u_lo), float(u_hi)), lower, upper)


def additive_noise(s: float, lower=None, upper=None) -> ImpulseKernel:
    return ImpulseKernel("additive-noise", (float(s),), lower, upper)


def custom_table(values, probs, lower=None, upper=None) -> ImpulseKernel:
    return ImpulseKernel("custom-table", ((0.0, tuple(values), tuple(probs)),), lower, upper)


def load_table_csv(path) -> tuple[list[float], list[float]]:
    """Read a ``v,p`` table from CSV with a header row."""
    values, probs = [], []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"v", "p"} <= set(reader.fieldnames):
            raise DomainError(f"{path}: CSV needs columns v and p")
        for row in reader:
            values.append(float(row["v"]))
            probs.append(float(row["p"]))
    return values, probs


def sample_impulse(kernel: ImpulseKernel, y: float, z: float, stream: np.random.Generator) -> float:
    """Draw the realized post-impulse state ``v ~ Q(y, z)``."""
    kind = kernel.kind
    if kind == "deterministic":
        v = z
    elif kind == "partial-fraction":
        u_lo, u_hi = kernel.params
        v = y + stream.uniform(u_lo, u_hi) * (z - y)
    elif kind == "additive-noise":
        v = z + stream.normal(0.0, kernel.params[0]) if kernel.params[0] > 0 else z
    elif kind == "custom-table":
        support, probs = kernel.table_at(y)
        cdf = np.cumsum(probs)
        idx = min(int(np.searchsorted(cdf, stream.random() * cdf[-1], side="right")), support.size - 1)
        v = support[idx]
    else:
        v = kernel.params[0](y, z, stream)
    return float(kernel.clamp(float(v)))


def _censored_uniform_moments(a, b, lo, hi):
    if a == b:
        v = min(max(a, lo), hi)
        return v, 0.0
    width = b - a
    pieces = []  # (prob, mean, second moment)
    if lo > a:
        p = (min(lo, b) - a) / width
        pieces.append((p, lo, lo * lo))
    if hi < b:
        p = (b - max(hi, a)) / width
        pieces.append((p, hi, hi * hi))
    ia, ib = max(a, lo), min(b, hi)
    if ib > ia:
        p = (ib - ia) / width
        pieces.append((p, (ia + ib) / 2, (ia * ia + ia * ib + ib * ib) / 3))
    mean = sum(p * m for p, m, _ in pieces)
    second = sum(p * s for p, _, s in pieces)
    return mean, max(second - mean * mean, 0.0)


def _censored_normal_moments(mu, s, lo, hi):
    if s == 0:
        v = min(max(mu, lo), hi)
        return v, 0.0
    a, b = (lo - mu) / s, (hi - mu) / s
    Fa, Fb = stats.norm.cdf(a), stats.norm.cdf(b)
    fa = stats.norm.pdf(a) if math.isfinite(a) else 0.0
    fb = stats.norm.pdf(b) if math.isfinite(b) else 0.0
    mass = Fb - Fa
    # interior part of E[X] and E[X^2] for X = mu + s*Z restricted to (a, b)
    ez = fa - fb
    ez2 = mass + (a * fa if math.isfinite(a) else 0.0) - (b * fb if math.isfinite(b) else 0.0)
    m1 = mu * mass + s * ez
    m2 = mu * mu * mass + 2 * mu * s * ez + s * s * ez2
    if math.isfinite(lo):
        m1 += Fa * lo
        m2 += Fa * lo * lo
    if math.isfinite(hi):
        m1 += (1 - Fb) * hi
        m2 += (1 - Fb) * hi * hi
    return m1, max(m2 - m1 * m1, 0.0)


def kernel_moments(kernel: ImpulseKernel, y: float, z: float) -> tuple[float, float]:
    """Exact mean and variance of ``Q(y, z)`` including clamping at the bounds."""
    lo, hi = kernel.bounds
    kind = kernel.kind
    if kind == "deterministic":
        return float(kernel.clamp(z)), 0.0
    if kind == "partial-fraction":
        u_lo, u_hi = kernel.params
        a, b = sorted((y + u_lo * (z - y), y + u_hi * (z - y)))
        if lo <= a and b <= hi:
            mean_u = (u_lo + u_hi) / 2
            var_u = (u_hi - u_lo) ** 2 / 12
            return y + mean_u * (z - y), var_u * (z - y) ** 2
        return _censored_uniform_moments(a, b, lo, hi)
    if kind == "additive-noise":
        return _censored_normal_moments(z, kernel.params[0], lo, hi)
    if kind == "custom-table":
        support, probs = kernel.table_at(y)
        support = np.clip(support, lo, hi)
        mean = float(np.dot(probs, support))
        return mean, float(np.dot(probs, (support - mean) ** 2))
    raise NotAvailableError(f"no closed-form moments for kernel kind {kind!r}")
