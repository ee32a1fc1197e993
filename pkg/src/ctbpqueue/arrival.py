"""Arrival-time density and the two arrival laws built on top of it.

A fixed population of ``K`` customers arrives at i.i.d. random times drawn
from a piecewise-constant density on ``(0, T]``.  Counting arrivals in a
window gives binomial marginals and multinomial joint counts, so counts over
disjoint windows are negatively correlated.  The same density also induces an
auxiliary inhomogeneous Poisson process with rate ``alpha * f(t)``; the two
processes have identical conditional interval laws given the count at a later
time, which is what makes the Poisson machinery usable for the binomial
model.  This module owns the density, both conditional laws, and the exact
inverse-CDF sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PiecewisePdf",
    "ModelSpec",
    "cdf_segment",
    "cumulative_intensity",
    "ctbp_count_pmf",
    "ctbp_conditional_joint_pmf",
    "nhpp_conditional_joint_pmf",
    "sample_arrival_times",
]

# Density normalization: constructors silently fix drift up to this relative
# size and reject anything larger (callers that want full rescaling must do
# it themselves, see cli.parse_config).
_RESCALE_TOL = 1e-6
_NORM_TOL = 1e-12


@dataclass(frozen=True)
class PiecewisePdf:
    """Piecewise-constant probability density on ``(0, T]``.

    ``breakpoints`` are ``T_0 = 0 < T_1 < ... < T_N`` and ``levels[i]`` is
    the constant density on ``(T_i, T_{i+1}]``.  The first level must be
    positive so that the CDF is positive for every ``t > 0``.  Total mass
    must be 1 up to a small tolerance; drift below ``1e-6`` is rescaled
    away, anything larger is rejected.
    """

    breakpoints: tuple[float, ...]
    levels: tuple[float, ...]
    _cum: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        bp = tuple(float(b) for b in self.breakpoints)
        lv = tuple(float(g) for g in self.levels)
        if len(bp) < 2:
            raise ValueError("need at least two breakpoints")
        if bp[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if any(b >= a for b, a in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(lv) != len(bp) - 1:
            raise ValueError("need exactly one level per interval")
        if any(g < 0.0 for g in lv):
            raise ValueError("density levels must be nonnegative")
        if lv[0] <= 0.0:
            raise ValueError("density must be positive on the first interval")
        widths = [b - a for a, b in zip(bp, bp[1:])]
        mass = math.fsum(g * w for g, w in zip(lv, widths))
        if abs(mass - 1.0) > _RESCALE_TOL:
            raise ValueError(f"density mass is {mass!r}, not 1")
        if abs(mass - 1.0) > _NORM_TOL:
            # real drift: rescale; sub-tolerance wobble is left alone so
            # normalization is idempotent and serialized densities round-trip
            lv = tuple(g / mass for g in lv)
            mass = math.fsum(g * w for g, w in zip(lv, widths))
            if abs(mass - 1.0) > _NORM_TOL:
                raise ValueError("density failed to normalize")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "levels", lv)
        # running CDF at each breakpoint, cum[0] = F(T_1), ..., cum[N-1] ~ 1
        cum = []
        acc = 0.0
        for g, w in zip(lv, widths):
            acc += g * w
            cum.append(acc)
        object.__setattr__(self, "_cum", tuple(cum))

    @property
    def horizon(self) -> float:
        return self.breakpoints[-1]

    @property
    def n_intervals(self) -> int:
        return len(self.levels)

    def interval_width(self, n: int) -> float:
        """Width of interval ``n`` (1-based)."""
        if not 1 <= n <= self.n_intervals:
            raise ValueError(f"interval index {n} out of range")
        return self.breakpoints[n] - self.breakpoints[n - 1]

    def density(self, t):
        """Evaluate the density, vectorized.  Zero outside ``(0, horizon]``.

        A point sitting exactly on a breakpoint belongs to the interval on
        its left, matching the half-open interval convention used
        everywhere else.
        """
        x = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, x, side="left")
        idx = np.clip(idx, 1, self.n_intervals)
        vals = np.asarray(self.levels, dtype=float)[idx - 1]
        out = np.where((x > 0.0) & (x <= self.horizon), vals, 0.0)
        return float(out) if np.isscalar(t) else out

    @classmethod
    def uniform(cls, horizon: float, n_intervals: int = 1) -> "PiecewisePdf":
        """Uniform density on ``(0, horizon]`` split into equal intervals."""
        bp = tuple(np.linspace(0.0, horizon, n_intervals + 1))
        return cls(bp, (1.0 / horizon,) * n_intervals)


@dataclass(frozen=True)
class ModelSpec:
    """Everything that defines one queueing model instance.

    ``K`` customers, ``c`` exponential servers of rate ``mu``, arrival times
    drawn from ``pdf``.  ``alpha`` is the intensity scale of the auxiliary
    Poisson model; any positive value yields the same final distribution, it
    only reroutes the intermediate computation.  ``epsilon`` is the total
    truncation-error budget across the horizon, and ``t_max`` (optional)
    is how far past the last arrival queries may reach.
    """

    pdf: PiecewisePdf
    K: int
    c: int
    mu: float
    alpha: float
    epsilon: float
    t_max: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.K, int) or self.K < 1:
            raise ValueError("K must be a positive integer")
        if not isinstance(self.c, int) or self.c < 1:
            raise ValueError("c must be a positive integer")
        if not self.mu > 0.0:
            raise ValueError("mu must be positive")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.t_max is not None and not self.t_max > self.pdf.horizon:
            raise ValueError("t_max must exceed the arrival horizon")


def cdf_segment(pdf: PiecewisePdf, s: float, t: float) -> float:
    """Probability that a single arrival time lands in ``(s, t]``.

    Returns exactly 0 when the segment misses the support, in particular
    whenever ``s >= pdf.horizon``, which downstream code relies on when it
    branches on an empty remaining-arrival window.
    """
    if s < 0.0 or t < 0.0:
        raise ValueError("segment endpoints must be nonnegative")
    if t <= s:
        return 0.0
    bp = np.asarray(pdf.breakpoints)
    lv = np.asarray(pdf.levels)
    overlap = np.minimum(bp[1:], t) - np.maximum(bp[:-1], s)
    return float(lv @ np.clip(overlap, 0.0, None))


def cumulative_intensity(pdf: PiecewisePdf, alpha: float, s: float, t: float) -> float:
    """Integrated rate of the auxiliary Poisson model over ``(s, t]``."""
    if not alpha > 0.0:
        raise ValueError("alpha must be positive")
    return alpha * cdf_segment(pdf, s, t)


def ctbp_count_pmf(pdf: PiecewisePdf, K: int, t: float, k: int) -> float:
    """P[A(t) = k] for the binomial arrival count of ``K`` customers by ``t``."""
    if not isinstance(K, int) or K < 0:
        raise ValueError("K must be a nonnegative integer")
    if not isinstance(k, int) or not 0 <= k <= K:
        raise ValueError(f"count k={k} outside 0..{K}")
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    p = cdf_segment(pdf, 0.0, t)
    if p <= 0.0:
        return 1.0 if k == 0 else 0.0
    if p >= 1.0:
        return 1.0 if k == K else 0.0
    log_val = (
        math.lgamma(K + 1)
        - math.lgamma(k + 1)
        - math.lgamma(K - k + 1)
        + k * math.log(p)
        + (K - k) * math.log1p(-p)
    )
    return math.exp(log_val)


def _joint_increments(t, times, counts, k):
    """Shared validation for the conditional joint laws.

    Returns ``(segments, increments)`` where segments are consecutive
    ``(t_{i-1}, t_i]`` pairs covering ``(0, t]`` and increments are the count
    deltas, or ``None`` when the count vector is impossible (non-monotone),
    in which case the pmf is 0 rather than an error.
    """
    times = [float(x) for x in times]
    counts = [int(x) for x in counts]
    if len(times) != len(counts):
        raise ValueError("times and counts must have equal length")
    if not times:
        raise ValueError("need at least one interior time")
    if not t > 0.0:
        raise ValueError("t must be positive")
    if any(not 0.0 < x <= t for x in times):
        raise ValueError("interior times must lie in (0, t]")
    order = sorted(range(len(times)), key=lambda i: times[i])
    times = [times[i] for i in order]
    counts = [counts[i] for i in order]
    grid = [0.0] + times + [t]
    full = [0] + counts + [k]
    if any(b < a for a, b in zip(full, full[1:])):
        return None
    segs = list(zip(grid, grid[1:]))
    incs = [b - a for a, b in zip(full, full[1:])]
    return segs, incs


def _conditional_joint(weight_fn, t, times, counts, k, total_weight):
    got = _joint_increments(t, times, counts, k)
    if got is None:
        return 0.0
    segs, incs = got
    log_val = math.lgamma(k + 1) - k * math.log(total_weight)
    for (a, b), dk in zip(segs, incs):
        w = weight_fn(a, b)
        if w <= 0.0:
            if dk > 0:
                return 0.0
            continue
        log_val += dk * math.log(w) - math.lgamma(dk + 1)
    return math.exp(log_val)


def ctbp_conditional_joint_pmf(pdf, K, t, times, counts, k):
    """Joint law of interior counts given ``A(t) = k`` under the binomial model.

    ``P[A(t_1)=k_1, ..., A(t_m)=k_m | A(t)=k]`` where the ``times`` may come
    in any order and ``t`` may not exceed the horizon unless ``k == K``
    (conditioning on fewer than ``K`` arrivals after the horizon is on a
    null event and has no defined value).  Impossible count vectors return
    exactly 0.
    """
    if not isinstance(K, int) or K < 1:
        raise ValueError("K must be a positive integer")
    if not isinstance(k, int) or not 0 <= k <= K:
        raise ValueError(f"count k={k} outside 0..{K}")
    if t >= pdf.horizon and k != K:
        raise ValueError("conditioning count must be K at or past the horizon")
    total = cdf_segment(pdf, 0.0, t)
    if total <= 0.0:
        raise ValueError("conditioning time has zero arrival mass")
    return _conditional_joint(
        lambda a, b: cdf_segment(pdf, a, b), t, times, counts, k, total
    )


def nhpp_conditional_joint_pmf(pdf, alpha, t, times, counts, k):
    """Same conditional joint law, but for the auxiliary Poisson process.

    The intensity scale ``alpha`` cancels exactly; it is accepted only so
    the call shape mirrors the unconditional Poisson computations.  The
    returned value is identical to the binomial one on the shared domain,
    which is the property the propagation engine exploits.
    """
    if not isinstance(k, int) or k < 0:
        raise ValueError("count k must be a nonnegative integer")
    total = cumulative_intensity(pdf, alpha, 0.0, t)
    if total <= 0.0:
        raise ValueError("conditioning time has zero arrival mass")
    return _conditional_joint(
        lambda a, b: cumulative_intensity(pdf, alpha, a, b),
        t, times, counts, k, total,
    )


def sample_arrival_times(pdf: PiecewisePdf, K: int, rng) -> np.ndarray:
    """Draw ``K`` i.i.d. arrival times by exact inversion, sorted ascending.

    ``rng`` is a ``numpy.random.Generator`` or a seed for one.  Uses
    ``u = 1 - U`` so draws live in ``(0, 1]`` and no arrival can land at
    time 0; a draw hitting a breakpoint's cumulative mass exactly is
    assigned to the interval on the left.
    """
    if not isinstance(K, int) or K < 0:
        raise ValueError("K must be a nonnegative integer")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    bp = np.asarray(pdf.breakpoints)
    lv = np.asarray(pdf.levels)
    cum = np.asarray(pdf._cum)
    u = 1.0 - rng.random(K)
    # guard against u landing a hair above the float total mass
    u = np.minimum(u, cum[-1])
    idx = np.searchsorted(cum, u, side="left")
    prev = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
    t = bp[idx] + (u - prev) / lv[idx]
    t.sort()
    return t
