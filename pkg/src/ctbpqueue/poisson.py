"""Poisson tail machinery: pmf, series truncation points, mixing weights.

Every truncated series in the propagation engine is sized here, before any
state is touched, so the accuracy budget is a static property of the plan
rather than something discovered during the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ConfigurationError, NumericalGuardError

__all__ = [
    "TruncationPlan",
    "poisson_pmf",
    "poisson_upper_quantile",
    "poisson_ratio_weight",
    "find_truncation_point",
    "build_truncation_plan",
]


def poisson_pmf(a: float, k: int) -> float:
    """Poisson probability ``e^{-a} a^k / k!`` with the ``a = 0`` limit built in."""
    if not isinstance(k, int) or k < 0:
        raise ValueError("k must be a nonnegative integer")
    if a < 0.0:
        raise ValueError("Poisson mean must be nonnegative")
    if a == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(a) - a - math.lgamma(k + 1))


def _pmf_terms(a: float, hi: int) -> np.ndarray:
    """Poisson pmf values for k = 0..hi, vectorized through the log domain."""
    k = np.arange(hi + 1)
    return np.exp(k * math.log(a) - a - gammaln(k + 1))


def _tail_beyond(a: float, hi: int) -> float:
    """Upper bound on the Poisson mass strictly above ``hi`` (geometric bound).

    Valid once ``hi + 2 > a``; callers always pass a cut far beyond the mode.
    """
    r = a / (hi + 2)
    if r >= 1.0:
        raise ValueError("cut point too close to the mode for the tail bound")
    return poisson_pmf(a, hi + 1) / (1.0 - r)


def poisson_upper_quantile(a: float, tail_budget: float) -> int:
    """Smallest ``q`` with ``P[Poisson(a) > q] < tail_budget`` (strict).

    Two estimates of the tail are kept: a descending partial sum of pmf
    terms (accurate even when the budget is only a few ulps, because the
    terms being summed are themselves tiny there) and an ascending
    compensated CDF.  The CDF's absolute noise floor is roughly 1e-13 for
    large ``a``, so it is used as a strict second gate only when the budget
    is comfortably above that floor; below it, it still must agree up to
    the floor or the function refuses to certify a result.
    """
    if a < 0.0:
        raise ValueError("Poisson mean must be nonnegative")
    if not 0.0 < tail_budget <= 1.0:
        raise ValueError("tail budget must lie in (0, 1]")
    if a == 0.0:
        return 0
    # find a cut where the remaining mass is negligible next to the budget
    hi = int(a + 10.0 * math.sqrt(a) + 30.0)
    while _tail_beyond(a, hi) > tail_budget * 1e-6:
        hi = int(hi * 1.25 + 20)
        if hi > 10_000_000:
            raise NumericalGuardError("truncation search failed to converge")
    terms = _pmf_terms(a, hi)
    rem = _tail_beyond(a, hi)
    # tails[q] >= P[X > q], summed smallest-terms-first beyond the mode
    tails = np.empty(hi + 1)
    tails[hi] = rem
    acc = rem
    for q in range(hi - 1, -1, -1):
        acc += terms[q + 1]
        tails[q] = acc
    # ascending compensated CDF
    cdf = np.empty(hi + 1)
    s = 0.0
    comp = 0.0
    for q in range(hi + 1):
        y = terms[q] - comp
        tt = s + y
        comp = (tt - s) - y
        s = tt
        cdf[q] = s
    target = 1.0 - tail_budget
    for q in range(hi + 1):
        if tails[q] >= tail_budget:
            continue
        if tail_budget >= 1e-12:
            if cdf[q] > target:
                return q
            continue  # the two estimates must both cross
        if cdf[q] > target - 1e-12:
            return q
        raise NumericalGuardError(
            "tail estimate and CDF estimate disagree beyond the noise floor "
            f"at q={q} (cdf deficit {target - cdf[q]:.3e})"
        )
    raise NumericalGuardError("no truncation point found below the search cut")


def find_truncation_point(theta: float, dt: float, K: int, target: float) -> int:
    """Smallest ``M`` with ``sum_{m=0}^{M-K} Poisson(theta*dt, m) > target``.

    ``M`` counts uniformization steps for an interval of length ``dt`` run
    at rate ``theta``, shifted by the population size ``K`` so that the
    certified retained mass covers every starting count in the triangular
    state space at once.
    """
    if not theta > 0.0:
        raise ValueError("theta must be positive")
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if not isinstance(K, int) or K < 0:
        raise ValueError("K must be a nonnegative integer")
    if not 0.0 <= target < 1.0:
        raise ValueError("target must lie in [0, 1)")
    if target == 0.0:
        return K
    return K + poisson_upper_quantile(theta * dt, 1.0 - target)


def poisson_ratio_weight(lambda_tail: float, lambda_total: float, K: int, k: int) -> float:
    """Weight ``Poisson(lambda_tail, K-k) / Poisson(lambda_total, K)``.

    This is the factor that converts an auxiliary-model state probability at
    count ``k`` into its share of the fixed-population answer.  Evaluated as
    a single log-domain expression; the ``lambda_tail == 0`` limit puts all
    weight on ``k == K``.
    """
    if not isinstance(K, int) or K < 0:
        raise ValueError("K must be a nonnegative integer")
    if not isinstance(k, int) or not 0 <= k <= K:
        raise ValueError(f"count k={k} outside 0..{K}")
    if not lambda_total > 0.0:
        raise ValueError("lambda_total must be positive")
    if not 0.0 <= lambda_tail <= lambda_total:
        raise ValueError("lambda_tail must lie in [0, lambda_total]")
    log_denom = K * math.log(lambda_total) - lambda_total - math.lgamma(K + 1)
    if lambda_tail == 0.0:
        if k != K:
            return 0.0
        try:
            return math.exp(-log_denom)
        except OverflowError:
            return math.inf
    log_num = (K - k) * math.log(lambda_tail) - lambda_tail - math.lgamma(K - k + 1)
    try:
        return math.exp(log_num - log_denom)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class TruncationPlan:
    """Per-interval uniformization rates and certified series lengths.

    ``thetas[n]`` and ``trunc_points[n]`` describe interval ``n+1``; when
    ``post_horizon`` is set a final entry covers the drain period after the
    last arrival.  ``per_interval_target`` is the retained-mass target each
    interval was sized against, so the whole-horizon guarantee
    ``target ** n_intervals >= 1 - epsilon`` is checkable after the fact.
    """

    thetas: tuple[float, ...]
    trunc_points: tuple[int, ...]
    per_interval_target: float
    K: int
    post_horizon: bool = False

    def __post_init__(self) -> None:
        if len(self.thetas) != len(self.trunc_points):
            raise ValueError("thetas and trunc_points must have equal length")
        if not self.thetas:
            raise ValueError("plan must cover at least one interval")
        if any(not th > 0.0 for th in self.thetas):
            raise ValueError("uniformization rates must be positive")
        if not 0.0 <= self.per_interval_target < 1.0:
            raise ValueError("per-interval target must lie in [0, 1)")
        if not isinstance(self.K, int) or self.K < 0:
            raise ValueError("K must be a nonnegative integer")
        n_arrival = len(self.thetas) - (1 if self.post_horizon else 0)
        if n_arrival < 1:
            raise ValueError("plan must cover at least one arrival interval")
        if any(m < self.K for m in self.trunc_points[:n_arrival]):
            raise ValueError("arrival-interval series length below K")
        if any(m < 0 for m in self.trunc_points):
            raise ValueError("series lengths must be nonnegative")

    @property
    def n_arrival_intervals(self) -> int:
        return len(self.thetas) - (1 if self.post_horizon else 0)


def build_truncation_plan(spec, include_post_horizon: bool = False) -> TruncationPlan:
    """Size every interval's uniformization series for the whole horizon.

    The total budget ``spec.epsilon`` is split evenly on the multiplicative
    scale: each of the ``N`` arrival intervals (plus the drain interval when
    requested) must retain mass ``(1 - epsilon) ** (1/N)`` (respectively
    ``1/(N+1)``).  The drain interval needs ``spec.t_max``; asking for it
    without one is a configuration error.
    """
    pdf = spec.pdf
    n = pdf.n_intervals
    parts = n + 1 if include_post_horizon else n
    if include_post_horizon and spec.t_max is None:
        raise ConfigurationError("post-horizon plan requires t_max in the model")
    if parts == 1:
        target = 1.0 - spec.epsilon
    else:
        target = math.exp(math.log1p(-spec.epsilon) / parts)
    cmu = spec.c * spec.mu
    thetas = []
    points = []
    for i in range(n):
        theta = spec.alpha * pdf.levels[i] + cmu
        thetas.append(theta)
        points.append(find_truncation_point(theta, pdf.interval_width(i + 1), spec.K, target))
    if include_post_horizon:
        thetas.append(cmu)
        points.append(find_truncation_point(cmu, spec.t_max - pdf.horizon, 0, target))
    return TruncationPlan(
        thetas=tuple(thetas),
        trunc_points=tuple(points),
        per_interval_target=target,
        K=spec.K,
        post_horizon=include_post_horizon,
    )
