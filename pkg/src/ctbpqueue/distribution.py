"""Turn auxiliary-model states into the fixed-population queue-length law.

The auxiliary Poisson model matches the binomial arrival model conditionally
on its count, so its triangular state vector at time t can be reweighted into
the exact distribution of the queue length for K customers: each arrival row
k gets the weight of "exactly K - k more auxiliary arrivals after t, given K
in total".  The weights are computed in extended precision so that the
conversion adds nothing measurable to the truncation defect carried by the
state vector itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from mpmath import mp

from .arrival import ModelSpec
from .engine import TriangularVector
from .errors import ConfigurationError, NumericalGuardError

__all__ = [
    "QueueLengthDistribution",
    "mix_to_queue_length",
    "mass_defect",
    "summarize",
]


@dataclass(frozen=True)
class QueueLengthDistribution:
    """Queue-length pmf at one time point, plus its certified mass defect.

    ``probs[l]`` is P[L(t) = l] for l = 0..K, computed from truncated
    series; the probabilities sum to ``1 - mass_defect``.
    """

    t: float
    K: int
    probs: np.ndarray
    mass_defect: float

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.shape[0] != self.K + 1:
            raise ValueError(f"need K + 1 = {self.K + 1} probabilities")
        if p.min(initial=0.0) < 0.0:
            raise ValueError("probabilities must be nonnegative")
        if not 0.0 <= self.mass_defect <= 1.0:
            raise ValueError("mass defect must lie in [0, 1]")
        if p is self.probs:
            p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def mean(self) -> float:
        return float(np.arange(self.K + 1) @ self.probs)

    def variance(self) -> float:
        ell = np.arange(self.K + 1)
        m = self.mean()
        return max(float((ell * ell) @ self.probs) - m * m, 0.0)


@lru_cache(maxsize=512)
def _mixing_weights(head_pieces, tail_pieces, K: int) -> np.ndarray:
    """Row weights w[k] = Poisson(lam_tail, K-k) / Poisson(lam_head+lam_tail, K).

    The intensities arrive as per-interval (rate, width, skip) pieces rather
    than as two pre-summed floats, and are assembled here with mpmath at 50
    digits.  That keeps head + tail = total exact and, because the head
    pieces are the very same float products the propagation engine
    integrates, the binomial-splitting identity
    ``sum_k Poisson(lam_head, k) * w[k] = 1`` holds essentially to the last
    double bit.  Summing the integral independently in double first would
    not: a ~1e-13 absolute wobble in a head intensity of order 1e3 shows up
    in the reported defect multiplied by |K/total - 1|, swamping the
    truncation loss the defect is supposed to measure.

    When the intensity scale hugely exceeds K, weights for arrival counts
    far below the bulk can overflow a double even though their row carries
    (sub-double) negligible mass.  Those weights are zeroed; the mass their
    rows should have delivered then shows up, honestly, in the reported
    defect, since the kept probabilities no longer account for it.
    """
    with mp.workdps(50):
        lh = mp.fsum(mp.mpf(r) * (mp.mpf(w) - mp.mpf(s)) for r, w, s in head_pieces)
        lt = mp.fsum(mp.mpf(r) * (mp.mpf(w) - mp.mpf(s)) for r, w, s in tail_pieces)
        tot = lh + lt
        log_denom = K * mp.log(tot) - tot - mp.loggamma(K + 1)
        w = np.zeros(K + 1)
        if lt == 0:
            val = mp.exp(-log_denom)
            if val <= mp.mpf("1e300"):
                w[K] = float(val)
            # else: the whole answer sits below double resolution; leaving
            # the weight at zero reports the loss through the defect
        else:
            # u[m] = Poisson(lt, m); build by ratio recurrence from the mode
            u = [mp.mpf(0)] * (K + 1)
            mode = min(int(lt), K)
            u[mode] = mp.exp(mode * mp.log(lt) - lt - mp.loggamma(mode + 1))
            for m in range(mode, 0, -1):
                u[m - 1] = u[m] * m / lt
            for m in range(mode, K):
                u[m + 1] = u[m] * lt / (m + 1)
            denom = mp.exp(log_denom)
            for k in range(K + 1):
                val = u[K - k] / denom
                if val <= mp.mpf("1e300"):
                    w[k] = float(val)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=64)
def _diag_indices(K: int):
    """Packed indices of the constant-queue-length diagonals.

    Entry l holds the indices of states (k, k-l) for k = l..K, i.e. every
    state whose queue length is exactly l.
    """
    k = np.arange(K + 1)
    base = k * (k + 3) // 2  # index of (k, k)
    return tuple(base[ell:] - ell for ell in range(K + 1))


def _intensity_pieces(spec: ModelSpec, t: float):
    """Arrival intensity on either side of t, as raw (rate, width, skip) pieces.

    Each piece contributes rate * (width - skip).  The rate and offset
    products mirror, float for float, the quantities the propagation engine
    integrates over its intervals, so the head total implied here agrees
    with the intensity actually baked into a propagated state vector.
    """
    pdf = spec.pdf
    bp = pdf.breakpoints
    head, tail = [], []
    for n in range(pdf.n_intervals):
        lam = spec.alpha * pdf.levels[n]
        left, right = bp[n], bp[n + 1]
        width = right - left
        if t >= right:
            head.append((lam, width, 0.0))
        elif t <= left:
            tail.append((lam, width, 0.0))
        else:
            tau = t - left  # same expression as the engine's query offset
            head.append((lam, tau, 0.0))
            tail.append((lam, width, tau))
    return tuple(head), tuple(tail)


def _state_weights(p: TriangularVector, t: float, spec: ModelSpec) -> np.ndarray:
    if p.K != spec.K:
        raise ConfigurationError(
            f"state vector has K={p.K}, model has K={spec.K}"
        )
    if not t > 0.0:
        raise ValueError("t must be positive")
    horizon = spec.pdf.horizon
    if t > horizon and (spec.t_max is None or t > spec.t_max):
        raise ConfigurationError(f"time {t} is outside the model's coverage")
    head, tail = _intensity_pieces(spec, t)
    return _mixing_weights(head, tail, spec.K)


def mix_to_queue_length(p: TriangularVector, t: float, spec: ModelSpec) -> QueueLengthDistribution:
    """Reweight an auxiliary state vector into the K-customer queue-length law.

    For t at or beyond the arrival horizon all weight sits on arrival row K,
    so the general formula degenerates to a single-row rescaling without any
    special casing here.
    """
    w = _state_weights(p, t, spec)
    K = spec.K
    probs = np.empty(K + 1)
    diags = _diag_indices(K)
    for ell in range(K + 1):
        probs[ell] = p.entries[diags[ell]] @ w[ell:]
    defect = _defect_from_weights(p, w)
    return QueueLengthDistribution(t=t, K=K, probs=np.clip(probs, 0.0, None), mass_defect=defect)


def _defect_from_weights(p: TriangularVector, w: np.ndarray) -> float:
    expanded = np.repeat(w, np.arange(1, p.K + 2))
    kept = math.fsum((p.entries * expanded).tolist())
    return max(1.0 - kept, 0.0)


def mass_defect(p: TriangularVector, t: float, spec: ModelSpec) -> float:
    """Probability mass lost to truncation at time t, after reweighting.

    Exactly the amount by which the reweighted pmf fails to sum to 1; zero
    input defect gives zero output defect up to summation roundoff.
    """
    return _defect_from_weights(p, _state_weights(p, t, spec))


def summarize(d: QueueLengthDistribution, percentile: float = 0.95) -> dict:
    """Mean, variance, median, mode and an upper percentile of the pmf.

    Order statistics are read off the raw truncated masses without
    renormalization.  Refuses to summarize anything that lost more than 1%
    of its mass; summaries of such a vector would be quietly biased.
    """
    if not 0.0 < percentile < 1.0:
        raise ValueError("percentile must lie in (0, 1)")
    if d.mass_defect >= 0.01:
        raise NumericalGuardError(
            f"mass defect {d.mass_defect:.3e} too large to summarize"
        )
    cum = np.cumsum(d.probs)
    median = int(np.searchsorted(cum, 0.5))
    pct = int(np.searchsorted(cum, percentile))
    return {
        "mean": d.mean(),
        "variance": d.variance(),
        "median": min(median, d.K),
        "mode": int(np.argmax(d.probs)),
        "percentile": min(pct, d.K),
        "percentile_level": percentile,
        "mass_defect": d.mass_defect,
    }
