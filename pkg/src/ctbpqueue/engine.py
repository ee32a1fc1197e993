"""Transient propagation of the auxiliary queueing model.

State is the pair (arrivals so far, departures so far) restricted to the
triangle 0 <= j <= k <= K and stored packed row-major, row k starting at
offset k*(k+1)/2.  Each arrival interval has constant rates, so the interval
transition kernel is a single uniformization series: repeatedly apply one
stochastic step matrix and accumulate Poisson-weighted snapshots.  The step
matrix is never formed; one step is an O(K^2) sweep over the packed vector.

Everything here is deliberately allocation-light because the flagship
workload is K = 1000 over tens of thousands of steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.linalg.blas import daxpy

from .arrival import ModelSpec
from .errors import ConfigurationError, NumericalGuardError
from .poisson import TruncationPlan

__all__ = [
    "TriangularVector",
    "IntervalOperator",
    "uniformized_step",
    "propagate_interval",
    "run_horizon",
]


def _tri_size(K: int) -> int:
    return (K + 1) * (K + 2) // 2


def _row_offset(k: int) -> int:
    return k * (k + 1) // 2


@dataclass(frozen=True)
class TriangularVector:
    """Sub-probability vector over the triangular count space.

    ``entries[k*(k+1)//2 + j]`` is the mass on (k arrivals, j departures).
    Snapshots handed out by the engine are immutable; the backing array is
    marked read-only.
    """

    K: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.K, int) or self.K < 0:
            raise ValueError("K must be a nonnegative integer")
        e = np.ascontiguousarray(self.entries, dtype=np.float64)
        if e.ndim != 1 or e.shape[0] != _tri_size(self.K):
            raise ValueError(
                f"need {_tri_size(self.K)} packed entries for K={self.K}"
            )
        if e.min(initial=0.0) < 0.0:
            raise ValueError("state probabilities must be nonnegative")
        if e is self.entries:
            e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @classmethod
    def point_mass(cls, K: int) -> "TriangularVector":
        e = np.zeros(_tri_size(K))
        e[0] = 1.0
        return cls(K, e)

    def get(self, k: int, j: int) -> float:
        if not 0 <= j <= k <= self.K:
            raise ValueError(f"state ({k}, {j}) outside the triangle")
        return float(self.entries[_row_offset(k) + j])

    def arrival_marginal(self) -> np.ndarray:
        """Mass per arrival count k, summing out departures."""
        offsets = [_row_offset(k) for k in range(self.K + 1)]
        return np.add.reduceat(self.entries, offsets)

    def total_mass(self) -> float:
        return math.fsum(self.entries.tolist())


@dataclass(frozen=True)
class IntervalOperator:
    """Constant-rate dynamics for one interval.

    Arrival rate ``lam`` (zero after the horizon), ``c`` servers of rate
    ``mu``, uniformization rate ``theta``.  ``theta`` must dominate the
    total outflow rate of every state, which for this model means
    ``lam + c*mu``.
    """

    lam: float
    mu: float
    c: int
    theta: float

    def __post_init__(self) -> None:
        if self.lam < 0.0:
            raise ValueError("arrival rate must be nonnegative")
        if self.mu < 0.0:
            raise ValueError("service rate must be nonnegative")
        if not isinstance(self.c, int) or self.c < 1:
            raise ValueError("c must be a positive integer")
        if not self.theta > 0.0:
            raise ValueError("theta must be positive")
        need = self.lam + self.c * self.mu
        if self.theta < need * (1.0 - 1e-12):
            raise ValueError("theta must dominate lam + c*mu")

    @classmethod
    def for_rates(cls, lam: float, mu: float, c: int) -> "IntervalOperator":
        return cls(lam=lam, mu=mu, c=c, theta=lam + c * mu)

    @classmethod
    def post_horizon(cls, mu: float, c: int) -> "IntervalOperator":
        return cls(lam=0.0, mu=mu, c=c, theta=c * mu)


@njit(cache=True)
def _step_kernel(p, out, K, a, srv):
    """One uniformized step, gather form.

    ``a = lam/theta``; ``srv[q] = min(q, c)*mu/theta`` indexed by queue
    length q = k - j.  In-flows recompute the exact same products that the
    source states lose, so mass is conserved up to bare add roundoff (plus
    the deliberate leak out of row K, which is the truncation defect).
    """
    for k in range(K + 1):
        off = k * (k + 1) // 2
        offm = off - k
        for j in range(k + 1):
            x = p[off + j]
            acc = x - a * x - srv[k - j] * x
            if j < k:
                acc += a * p[offm + j]
            if j >= 1:
                acc += srv[k - j + 1] * p[off + j - 1]
            if acc < 0.0:
                acc = 0.0
            out[off + j] = acc


def _service_table(op: IntervalOperator, K: int) -> np.ndarray:
    q = np.arange(K + 2)
    return np.minimum(q, op.c) * (op.mu / op.theta)


# State spaces at or below this many packed entries are stepped in 80-bit
# extended precision.  Small populations paired with a large intensity scale
# route their mass through weights of widely varying magnitude, where plain
# double stepping leaves ~1e-13 of redistribution noise in the final defect;
# the extended path pushes that below 1e-16 and is still fast at this size.
_EXTENDED_MAX_ENTRIES = 40_000


@lru_cache(maxsize=32)
def _ext_maps(K: int):
    """Index plumbing for the vectorized extended-precision step.

    Returns (queue lengths per packed entry, arrival-target indices,
    in-row in-flow mask).  Arrival in-flow targets are every entry with
    j < k; their sources are exactly the packed entries of rows 0..K-1 in
    order, so the source side is a plain prefix slice.
    """
    q = np.concatenate([np.arange(k, -1, -1) for k in range(K + 1)])
    tgt = np.concatenate(
        [np.arange(_row_offset(k), _row_offset(k) + k) for k in range(1, K + 1)]
    ) if K > 0 else np.empty(0, dtype=np.int64)
    row_start = np.zeros(_tri_size(K), dtype=bool)
    row_start[[_row_offset(k) for k in range(K + 1)]] = True
    in_row_mask = (~row_start).astype(np.longdouble)
    return q, tgt.astype(np.int64), in_row_mask


def _step_ext(p, a, srv_diag, tgt, in_row_mask):
    """One uniformized step on longdouble, same flow form as the kernel.

    In-flows reuse the exact products removed from their source states
    (``ap`` prefix for arrivals, ``sp`` shifted by one for services), so
    conservation holds to extended-precision add roundoff.
    """
    ap = a * p
    sp = srv_diag * p
    out = p - ap - sp
    out[tgt] += ap[: tgt.size]
    out[1:] += in_row_mask[1:] * sp[:-1]
    np.maximum(out, np.longdouble(0.0), out=out)
    return out


def uniformized_step(p: TriangularVector, op: IntervalOperator) -> TriangularVector:
    """Apply the interval's uniformized step matrix once."""
    out = np.empty_like(p.entries)
    _step_kernel(p.entries, out, p.K, op.lam / op.theta, _service_table(op, p.K))
    return TriangularVector(p.K, out)


def _poisson_weights(a: float, M: int, dtype=np.float64) -> np.ndarray:
    """Normalized Poisson(a) weights on 0..M.

    Built by the two-sided ratio recurrence from the mode, then scaled so
    the weights sum to the true retained mass 1 - P[Poisson(a) > M] (with
    the tail estimated by continuing the same recurrence).  Entries that
    underflow below 1e-300 on the way down from the mode are exact zeros,
    which the stepping loop uses to skip dead accumulations.

    The anchor value's own rounding cancels in the normalization, so the
    relative accuracy of each weight is set purely by the recurrence
    arithmetic in ``dtype``.
    """
    w = np.zeros(M + 1, dtype=dtype)
    one = dtype(1.0)
    if a == 0.0:
        w[0] = one
        return w
    ad = dtype(a)
    mode = min(int(a), M)
    anchor = math.exp(mode * math.log(a) - a - math.lgamma(mode + 1))
    if anchor == 0.0:
        raise NumericalGuardError(
            f"series of length {M} keeps no representable mass at rate {a}"
        )
    w[mode] = dtype(anchor)
    for m in range(mode, 0, -1):
        v = w[m] * (dtype(m) / ad)
        if v < 1e-300:
            break
        w[m - 1] = v
    for m in range(mode, M):
        v = w[m] * (ad / dtype(m + 1))
        if v == 0.0:
            break
        w[m + 1] = v
    # tail beyond M in the same raw scale
    tail = dtype(0.0)
    t = w[M]
    m = M
    while t > 0.0 and (m < a or t > tail * 1e-18):
        m += 1
        t = t * (ad / dtype(m))
        tail += t
        if m > M + 100_000_000:
            raise NumericalGuardError("tail recurrence failed to terminate")
    if dtype is np.float64:
        w /= math.fsum(w.tolist()) + float(tail)
    else:
        w /= np.sum(w) + tail
    return w


def propagate_interval(
    p_start: TriangularVector,
    op: IntervalOperator,
    dt_total: float,
    M: int,
    query_offsets=(),
    extended: bool | None = None,
) -> tuple[list[TriangularVector], TriangularVector]:
    """Run one interval, returning interior snapshots and the endpoint state.

    ``query_offsets`` are elapsed times within the interval, each in
    ``(0, dt_total]``; one snapshot comes back per offset, in input order.
    Every snapshot and the endpoint reuse the same step sequence; a single
    pass over m = 0..M feeds all accumulators, and the pass stops early
    once every remaining Poisson weight is an exact zero.

    ``extended`` forces the 80-bit stepping path on or off; by default
    small state spaces use it (see ``_EXTENDED_MAX_ENTRIES``) and large
    ones use the compiled double-precision kernel.
    """
    if extended is None:
        extended = p_start.entries.size <= _EXTENDED_MAX_ENTRIES
    dtype = np.longdouble if extended else np.float64
    cur = p_start.entries.astype(dtype)
    accs, end = _propagate_raw(cur, p_start.K, op, dt_total, M, query_offsets, dtype)
    endpoint = TriangularVector(p_start.K, np.asarray(end, dtype=np.float64))
    snaps = [
        endpoint if acc is end else TriangularVector(p_start.K, np.asarray(acc, dtype=np.float64))
        for acc in accs
    ]
    return snaps, endpoint


def _propagate_raw(cur, K, op, dt_total, M, query_offsets, dtype):
    """Interval propagation on a raw packed array kept in ``dtype``.

    Returns (snapshot arrays in query order, endpoint array).  Keeping the
    carried state in extended precision across interval boundaries matters:
    one premature round to double per boundary would put most of the noise
    the extended path exists to remove right back in.
    """
    if not dt_total > 0.0:
        raise ValueError("interval length must be positive")
    if not isinstance(M, int) or M < 0:
        raise ValueError("series length must be a nonnegative integer")
    offsets = [float(d) for d in query_offsets]
    if any(not 0.0 < d <= dt_total for d in offsets):
        raise ValueError("query offsets must lie in (0, dt_total]")

    end_w = _poisson_weights(op.theta * dt_total, M, dtype)
    weights = [end_w]
    acc_of = []  # accumulator index per query offset
    for d in offsets:
        if d == dt_total:
            acc_of.append(0)
        else:
            weights.append(_poisson_weights(op.theta * d, M, dtype))
            acc_of.append(len(weights) - 1)

    last_active = 0
    for w in weights:
        nz = np.nonzero(w)[0]
        if nz.size:
            last_active = max(last_active, int(nz[-1]))

    if dtype is np.longdouble:
        qv, tgt, in_row_mask = _ext_maps(K)
        theta_ld = np.longdouble(op.theta)
        a = np.longdouble(op.lam) / theta_ld
        srv_tab = np.minimum(np.arange(K + 2), op.c) * (np.longdouble(op.mu) / theta_ld)
        srv_diag = srv_tab[qv]
        accs = [w[0] * cur for w in weights]
        for m in range(1, last_active + 1):
            cur = _step_ext(cur, a, srv_diag, tgt, in_row_mask)
            for i, w in enumerate(weights):
                if w[m] != 0.0:
                    accs[i] += w[m] * cur
    else:
        srv = _service_table(op, K)
        a = op.lam / op.theta
        cur = np.array(cur, dtype=np.float64, copy=True)
        nxt = np.empty_like(cur)
        accs = [w[0] * cur for w in weights]
        for m in range(1, last_active + 1):
            _step_kernel(cur, nxt, K, a, srv)
            cur, nxt = nxt, cur
            for i, w in enumerate(weights):
                if w[m] != 0.0:
                    accs[i] = daxpy(cur, accs[i], a=w[m])

    return [accs[i] for i in acc_of], accs[0]


def run_horizon(spec: ModelSpec, plan: TruncationPlan, query_times) -> list[tuple[float, TriangularVector]]:
    """Propagate from an empty system through every interval touched by a query.

    Returns one ``(t, state)`` pair per query time, in ascending time order.
    A query exactly on a breakpoint belongs to the interval ending there.
    Queries past the arrival horizon need both ``spec.t_max`` and a plan
    built with the post-horizon entry.
    """
    pdf = spec.pdf
    if plan.K != spec.K:
        raise ConfigurationError(
            f"plan was sized for K={plan.K}, model has K={spec.K}"
        )
    if plan.n_arrival_intervals != pdf.n_intervals:
        raise ConfigurationError("plan does not match the model's interval count")
    cmu = spec.c * spec.mu
    for i in range(pdf.n_intervals):
        want = spec.alpha * pdf.levels[i] + cmu
        if abs(plan.thetas[i] - want) > 1e-9 * want:
            raise ConfigurationError(
                f"plan rate {plan.thetas[i]!r} for interval {i + 1} does not "
                f"match the model rate {want!r}"
            )

    times = sorted(float(t) for t in query_times)
    if not times:
        return []
    if times[0] <= 0.0:
        raise ValueError("query times must be positive")
    horizon = pdf.horizon
    if times[-1] > horizon:
        if not plan.post_horizon:
            raise ConfigurationError(
                "query beyond the arrival horizon needs a post-horizon plan"
            )
        if spec.t_max is None or times[-1] > spec.t_max:
            raise ConfigurationError(
                f"query time {times[-1]} exceeds the model's t_max"
            )

    unique = sorted(set(times))
    by_time: dict[float, TriangularVector] = {}
    extended = _tri_size(spec.K) <= _EXTENDED_MAX_ENTRIES
    dtype = np.longdouble if extended else np.float64
    state = TriangularVector.point_mass(spec.K).entries.astype(dtype)
    pos = 0  # first unique time not yet answered
    for n in range(1, pdf.n_intervals + 1):
        if pos >= len(unique):
            break
        left, right = pdf.breakpoints[n - 1], pdf.breakpoints[n]
        qs = [t for t in unique[pos:] if t <= right]
        op = IntervalOperator(
            lam=spec.alpha * pdf.levels[n - 1],
            mu=spec.mu,
            c=spec.c,
            theta=plan.thetas[n - 1],
        )
        snaps, state = _propagate_raw(
            state, spec.K, op, right - left, plan.trunc_points[n - 1],
            [t - left for t in qs], dtype,
        )
        for t, s in zip(qs, snaps):
            by_time[t] = TriangularVector(spec.K, np.asarray(s, dtype=np.float64))
        pos += len(qs)
    if pos < len(unique):
        # remaining queries sit past the horizon; drain with zero arrivals
        op = IntervalOperator.post_horizon(spec.mu, spec.c)
        qs = unique[pos:]
        snaps, state = _propagate_raw(
            state, spec.K, op, spec.t_max - horizon, plan.trunc_points[-1],
            [t - horizon for t in qs], dtype,
        )
        for t, s in zip(qs, snaps):
            by_time[t] = TriangularVector(spec.K, np.asarray(s, dtype=np.float64))
    return [(t, by_time[t]) for t in times]
