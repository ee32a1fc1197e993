"""Monte Carlo reference paths and the classical Markovian comparison model.

Three independent routes to (approximately) the same distributions live
here, kept deliberately separate from the series engine so they can serve
as cross-checks on it:

* exact-inversion simulation of the K-customer arrival model with c FCFS
  exponential servers,
* thinning simulation of the matched-intensity Poisson-arrival system,
* a transient birth-death solver for the Poisson-arrival system (the
  standard time-varying many-server queue), truncated at a certified level.

Replications use counter-based substreams: replication r of seed s draws
from ``Philox(key=s)`` jumped r times, so results are reproducible and
independent of scheduling or chunking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.stats import poisson as _scipy_poisson

from .arrival import ModelSpec, PiecewisePdf, sample_arrival_times
from .distribution import QueueLengthDistribution
from .errors import NumericalGuardError
from .poisson import find_truncation_point, poisson_upper_quantile
from .engine import _poisson_weights  # same certified weight construction

__all__ = [
    "SamplePath",
    "EmpiricalDistribution",
    "sample_nhpp_arrival_times",
    "simulate_ctbp",
    "simulate_nhpp",
    "mtmc_transient",
    "tv_distance",
]


@dataclass(frozen=True)
class SamplePath:
    """One realized queue trajectory as a marked event sequence.

    ``times`` are the event instants in increasing order and ``kinds`` holds
    +1 for an arrival, -1 for a departure.  The queue length at any time is
    the running sum of kinds up to and including that time.
    """

    times: np.ndarray
    kinds: np.ndarray

    def __post_init__(self) -> None:
        t = np.ascontiguousarray(self.times, dtype=np.float64)
        k = np.ascontiguousarray(self.kinds, dtype=np.int8)
        if t.shape != k.shape or t.ndim != 1:
            raise ValueError("times and kinds must be equal-length vectors")
        if np.any(np.diff(t) < 0.0):
            raise ValueError("event times must be nondecreasing")
        if not np.all(np.abs(k) == 1):
            raise ValueError("event kinds must be +1 or -1")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "kinds", k)
        t.setflags(write=False)
        k.setflags(write=False)

    @property
    def n_arrivals(self) -> int:
        return int(np.sum(self.kinds == 1))

    def queue_length(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t, side="right"))
        return int(np.sum(self.kinds[:idx]))


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Histogram of queue lengths over replications, one row per time point."""

    times: tuple[float, ...]
    counts: np.ndarray  # shape (n_times, n_levels), integer tallies
    reps: int

    def __post_init__(self) -> None:
        c = np.ascontiguousarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != len(self.times):
            raise ValueError("need one histogram row per time point")
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if np.any(c.sum(axis=1) != self.reps):
            raise ValueError("each histogram row must sum to reps")
        object.__setattr__(self, "counts", c)
        c.setflags(write=False)

    def pmf(self, i: int) -> np.ndarray:
        return self.counts[i] / self.reps


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two pmfs on 0..max(len(p), len(q))-1."""
    n = max(len(p), len(q))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(p)] = p
    b[: len(q)] = q
    return 0.5 * float(np.abs(a - b).sum())


def _substream(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed).jumped(rep))


@njit(cache=True)
def _fcfs_departures(arr, svc, c):
    """Departure time per customer under FCFS with c servers.

    Customers enter service in arrival order; each takes the earliest-free
    server.  O(n * c), fine for the server counts used here.
    """
    n = arr.shape[0]
    dep = np.empty(n)
    free = np.zeros(c)
    for i in range(n):
        best = 0
        for s in range(1, c):
            if free[s] < free[best]:
                best = s
        start = arr[i] if arr[i] > free[best] else free[best]
        d = start + svc[i]
        free[best] = d
        dep[i] = d
    return dep


def _queue_lengths(arr: np.ndarray, dep: np.ndarray, times: np.ndarray) -> np.ndarray:
    dep_sorted = np.sort(dep)
    return np.searchsorted(arr, times, side="right") - np.searchsorted(
        dep_sorted, times, side="right"
    )


def _make_path(arr: np.ndarray, dep: np.ndarray) -> SamplePath:
    times = np.concatenate([arr, dep])
    kinds = np.concatenate([np.ones(len(arr), dtype=np.int8), -np.ones(len(dep), dtype=np.int8)])
    order = np.lexsort((-kinds, times))  # arrivals first on (measure-zero) ties
    return SamplePath(times[order], kinds[order])


def _validate_sim_args(sample_times, reps, seed):
    times = np.asarray(sorted(float(t) for t in sample_times))
    if times.size == 0:
        raise ValueError("need at least one sample time")
    if times[0] <= 0.0:
        raise ValueError("sample times must be positive")
    if not isinstance(reps, int) or reps < 1:
        raise ValueError("reps must be a positive integer")
    if not isinstance(seed, int) or seed < 0:
        raise ValueError("seed must be a nonnegative integer")
    return times


def simulate_ctbp(
    spec: ModelSpec,
    sample_times,
    reps: int,
    seed: int,
    store_paths: int = 0,
) -> tuple[EmpiricalDistribution, list[SamplePath]]:
    """Simulate the K-customer system and histogram L(t) at the sample times.

    Arrival times are drawn by exact CDF inversion (no thinning, no
    discretization), services are exponential(mu) under FCFS across c
    servers.  The first ``store_paths`` replications also come back as full
    event paths.
    """
    times = _validate_sim_args(sample_times, reps, seed)
    K, c, mu = spec.K, spec.c, spec.mu
    hist = np.zeros((times.size, K + 1), dtype=np.int64)
    paths: list[SamplePath] = []
    for rep in range(reps):
        g = _substream(seed, rep)
        arr = sample_arrival_times(spec.pdf, K, g)
        svc = g.exponential(1.0 / mu, K)
        dep = _fcfs_departures(arr, svc, c)
        ls = _queue_lengths(arr, dep, times)
        for i in range(times.size):
            hist[i, ls[i]] += 1
        if rep < store_paths:
            paths.append(_make_path(arr, dep))
    return EmpiricalDistribution(tuple(times), hist, reps), paths


def sample_nhpp_arrival_times(
    pdf: PiecewisePdf, rate_scale: float, rng
) -> np.ndarray:
    """Arrival times of a Poisson process with rate ``rate_scale * f(t)``.

    Thinning against the constant bound ``rate_scale * max(f)``; returns a
    sorted array whose length is itself random.  Intervals where the density
    is zero produce no events.
    """
    if not rate_scale > 0.0:
        raise ValueError("rate_scale must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    bound = rate_scale * max(pdf.levels)
    horizon = pdf.horizon
    n_cand = rng.poisson(bound * horizon)
    cand = rng.uniform(0.0, horizon, n_cand)
    keep = rng.random(n_cand) * bound < rate_scale * pdf.density(cand)
    out = cand[keep]
    out.sort()
    return out


def simulate_nhpp(
    spec: ModelSpec,
    sample_times,
    reps: int,
    seed: int,
    store_paths: int = 0,
) -> tuple[EmpiricalDistribution, list[SamplePath]]:
    """Simulate the matched-intensity Poisson-arrival system (rate K*f).

    Same servers and sampling grid as :func:`simulate_ctbp`, so paired runs
    with equal seeds isolate the effect of the arrival law alone.  The
    number of arrivals is unbounded, so the histogram grows as needed.
    """
    times = _validate_sim_args(sample_times, reps, seed)
    K, c, mu = spec.K, spec.c, spec.mu
    cap = K + int(6.0 * math.sqrt(K)) + 10
    hist = np.zeros((times.size, cap + 1), dtype=np.int64)
    paths: list[SamplePath] = []
    for rep in range(reps):
        g = _substream(seed, rep)
        arr = sample_nhpp_arrival_times(spec.pdf, float(K), g)
        svc = g.exponential(1.0 / mu, arr.size)
        dep = _fcfs_departures(arr, svc, c) if arr.size else np.empty(0)
        ls = _queue_lengths(arr, dep, times)
        top = int(ls.max(initial=0))
        if top > cap:
            grown = np.zeros((times.size, top + 1), dtype=np.int64)
            grown[:, : cap + 1] = hist
            hist, cap = grown, top
        for i in range(times.size):
            hist[i, ls[i]] += 1
        if rep < store_paths:
            paths.append(_make_path(arr, dep))
    return EmpiricalDistribution(tuple(times), hist, reps), paths


@njit(cache=True)
def _bd_step(p, out, a, srv):
    """One uniformized birth-death step; births out of the top state are
    clipped (the certified level bound makes that distortion negligible)."""
    n = p.shape[0]
    for i in range(n):
        x = p[i]
        acc = x - srv[i] * x
        if i < n - 1:
            acc -= a * x
        if i >= 1:
            acc += a * p[i - 1]
        if i < n - 1:
            acc += srv[i + 1] * p[i + 1]
        if acc < 0.0:
            acc = 0.0
        out[i] = acc


def mtmc_transient(spec: ModelSpec, query_times) -> list[QueueLengthDistribution]:
    """Transient queue-length law of the Poisson-arrival system, rate K*f(t).

    Solves the time-varying birth-death chain by per-interval uniformization
    on levels 0..L_max, where L_max is chosen so the neglected mass is below
    ``epsilon/2`` uniformly in t; the per-interval series share the other
    half of the budget.  The reported ``mass_defect`` of each result adds
    the level-clipping bound to the actually observed series loss.  The
    ``K`` field of each result is L_max, the top represented level.
    """
    pdf = spec.pdf
    times = sorted(float(t) for t in query_times)
    if not times:
        return []
    if times[0] <= 0.0:
        raise ValueError("query times must be positive")
    if times[-1] > pdf.horizon:
        raise ValueError("query times must not exceed the arrival horizon")

    l_max = poisson_upper_quantile(float(spec.K), spec.epsilon / 2.0)
    clip_bound = float(_scipy_poisson.sf(l_max, spec.K))
    n = pdf.n_intervals
    target = math.exp(math.log1p(-spec.epsilon / 2.0) / n)
    cmu = spec.c * spec.mu

    srv_base = np.minimum(np.arange(l_max + 2), spec.c) * spec.mu
    p = np.zeros(l_max + 1)
    p[0] = 1.0
    out: dict[float, QueueLengthDistribution] = {}
    unique = sorted(set(times))
    pos = 0
    buf = np.empty_like(p)
    for i in range(n):
        if pos >= len(unique):
            break
        left, right = pdf.breakpoints[i], pdf.breakpoints[i + 1]
        lam = spec.K * pdf.levels[i]
        theta = lam + cmu
        m_steps = find_truncation_point(theta, right - left, 0, target)
        qs = [t for t in unique[pos:] if t <= right]
        offsets = [t - left for t in qs] + [right - left]
        ws = [_poisson_weights(theta * d, m_steps) for d in offsets]
        last = max(int(np.nonzero(w)[0][-1]) for w in ws)
        a = lam / theta
        srv = srv_base / theta
        accs = [w[0] * p for w in ws]
        for m in range(1, last + 1):
            _bd_step(p, buf, a, srv)
            p, buf = buf, p
            for idx, w in enumerate(ws):
                if w[m] != 0.0:
                    accs[idx] += w[m] * p
        for t, acc in zip(qs, accs[:-1]):
            defect = max(1.0 - math.fsum(acc.tolist()), 0.0) + clip_bound
            out[t] = QueueLengthDistribution(
                t=t, K=l_max, probs=np.clip(acc, 0.0, None), mass_defect=defect
            )
        p = accs[-1]
        pos += len(qs)
    return [out[t] for t in times]
