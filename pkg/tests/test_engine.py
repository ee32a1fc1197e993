import math

import numpy as np
import pytest
from scipy.stats import poisson as sp_poisson

import oracles
from ctbpqueue.arrival import ModelSpec, PiecewisePdf, cumulative_intensity
from ctbpqueue.engine import (
    IntervalOperator,
    TriangularVector,
    _poisson_weights,
    _tri_size,
    propagate_interval,
    run_horizon,
    uniformized_step,
)
from ctbpqueue.errors import ConfigurationError
from ctbpqueue.poisson import build_truncation_plan, poisson_pmf
from ctbpqueue.presets import reference_spec


def random_state(K: int, rng, mass: float = 1.0) -> TriangularVector:
    e = rng.random(_tri_size(K))
    e *= mass / e.sum()
    return TriangularVector(K, e)


# ---------------------------------------------------------------------------
# TriangularVector


def test_triangular_vector_validation():
    with pytest.raises(ValueError):
        TriangularVector(2, np.zeros(5))  # needs 6 packed entries
    with pytest.raises(ValueError):
        TriangularVector(1, np.array([0.5, -0.1, 0.6]))
    with pytest.raises(ValueError):
        TriangularVector(-1, np.zeros(0))


def test_point_mass_and_get():
    p = TriangularVector.point_mass(3)
    assert p.get(0, 0) == 1.0
    assert p.get(3, 2) == 0.0
    assert p.total_mass() == 1.0
    with pytest.raises(ValueError):
        p.get(2, 3)  # j > k
    with pytest.raises(ValueError):
        p.get(4, 0)  # k > K


def test_snapshot_entries_are_read_only():
    p = TriangularVector.point_mass(2)
    with pytest.raises(ValueError):
        p.entries[0] = 0.5


def test_arrival_marginal_sums_rows():
    rng = np.random.default_rng(3)
    p = random_state(4, rng)
    marg = p.arrival_marginal()
    want = [math.fsum(p.get(k, j) for j in range(k + 1)) for k in range(5)]
    assert np.allclose(marg, want, rtol=1e-15, atol=0.0)
    assert math.isclose(marg.sum(), 1.0, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# IntervalOperator


def test_operator_validation():
    with pytest.raises(ValueError):
        IntervalOperator(lam=-1.0, mu=1.0, c=1, theta=2.0)
    with pytest.raises(ValueError):
        IntervalOperator(lam=1.0, mu=-1.0, c=1, theta=2.0)
    with pytest.raises(ValueError):
        IntervalOperator(lam=1.0, mu=1.0, c=0, theta=2.0)
    with pytest.raises(ValueError):
        IntervalOperator(lam=2.0, mu=1.0, c=3, theta=4.0)  # theta < lam + c*mu


def test_operator_constructors():
    op = IntervalOperator.for_rates(lam=1.5, mu=0.5, c=4)
    assert op.theta == 1.5 + 4 * 0.5
    post = IntervalOperator.post_horizon(mu=2.0, c=3)
    assert post.lam == 0.0 and post.theta == 6.0


# ---------------------------------------------------------------------------
# single uniformized step


def test_step_matches_dense_transition_matrix():
    K, lam, mu, c = 3, 0.7, 1.3, 2
    op = IntervalOperator.for_rates(lam, mu, c)
    Q = oracles.dense_generator(K, lam, mu, c)
    n = _tri_size(K)
    P = np.eye(n + 1) + Q / op.theta  # one extra absorbing overflow state
    rng = np.random.default_rng(11)
    p = random_state(K, rng)
    full = np.append(p.entries, 0.0)
    want = full @ P
    got = uniformized_step(p, op)
    assert np.allclose(got.entries, want[:n], rtol=5e-15, atol=1e-17)


def test_pure_birth_step_moves_point_mass():
    op = IntervalOperator(lam=2.0, mu=0.0, c=1, theta=2.0)
    out = uniformized_step(TriangularVector.point_mass(2), op)
    assert out.get(1, 0) == 1.0
    assert out.total_mass() == 1.0


def test_top_row_arrival_leak_is_the_only_loss():
    # mass on (K, 0) loses exactly lam/theta per step; service flow stays inside
    K = 2
    op = IntervalOperator.for_rates(lam=1.0, mu=0.8, c=2)
    e = np.zeros(_tri_size(K))
    e[-(K + 1)] = 1.0  # (K, 0)
    out = uniformized_step(TriangularVector(K, e), op)
    assert math.isclose(out.total_mass(), 1.0 - op.lam / op.theta, rel_tol=1e-15)


def test_zero_arrival_step_conserves_mass():
    rng = np.random.default_rng(7)
    p = random_state(5, rng)
    op = IntervalOperator.post_horizon(mu=1.7, c=2)
    out = uniformized_step(p, op)
    assert math.isclose(out.total_mass(), 1.0, rel_tol=1e-13)


# ---------------------------------------------------------------------------
# Poisson step weights


def test_poisson_weights_match_pmf_oracles():
    for a, M in ((0.3, 8), (4.0, 30)):
        w = _poisson_weights(a, M)
        ref = sp_poisson.pmf(np.arange(M + 1), a)
        keep = ref > 1e-290
        assert np.allclose(w[keep], ref[keep], rtol=1e-12, atol=0.0)
    # at large rates scipy itself drifts ~1e-12, so spot-check against the
    # high-precision oracle instead; the normalized recurrence is ulp-exact
    a, M = 900.0, 1100
    w = _poisson_weights(a, M)
    for k in range(700, M + 1, 13):
        assert math.isclose(w[k], oracles.mp_poisson_pmf(a, k), rel_tol=5e-15)


def test_poisson_weights_sum_to_retained_mass():
    for a, M in ((4.0, 6), (100.0, 120), (1000.0, 1005)):
        w = _poisson_weights(a, M)
        assert math.isclose(
            math.fsum(w.tolist()), float(sp_poisson.cdf(M, a)), rel_tol=1e-12
        )


def test_poisson_weights_zero_rate():
    w = _poisson_weights(0.0, 5)
    assert w[0] == 1.0 and not w[1:].any()


# ---------------------------------------------------------------------------
# interval propagation


def test_zero_length_series_scales_by_poisson_zero():
    rng = np.random.default_rng(19)
    p = random_state(4, rng)
    op = IntervalOperator.for_rates(lam=1.1, mu=0.6, c=2)
    delta = 0.35
    snaps, end = propagate_interval(p, op, delta, 0, query_offsets=[delta / 2])
    assert np.allclose(end.entries, math.exp(-op.theta * delta) * p.entries, rtol=1e-14)
    assert np.allclose(
        snaps[0].entries, math.exp(-op.theta * delta / 2) * p.entries, rtol=1e-14
    )


def test_endpoint_snapshot_is_aliased():
    p = TriangularVector.point_mass(2)
    op = IntervalOperator.for_rates(lam=1.0, mu=1.0, c=1)
    snaps, end = propagate_interval(p, op, 0.5, 40, query_offsets=[0.25, 0.5])
    assert snaps[1] is end
    assert not np.array_equal(snaps[0].entries, end.entries)


def test_extended_and_double_paths_agree():
    rng = np.random.default_rng(23)
    p = random_state(30, rng)
    op = IntervalOperator.for_rates(lam=2.4, mu=0.9, c=3)
    args = (p, op, 2.0, 60)
    _, end_ext = propagate_interval(*args, extended=True)
    _, end_dbl = propagate_interval(*args, extended=False)
    assert np.allclose(end_ext.entries, end_dbl.entries, rtol=0.0, atol=1e-13)


def test_thinned_arrival_marginal_when_mu_is_zero():
    # with no service the arrival marginal factors: the chance of k arrivals
    # times the chance the truncated step budget was not exhausted by fake events
    K, lam, theta, t, M = 6, 1.2, 2.0, 1.5, 8
    op = IntervalOperator(lam=lam, mu=0.0, c=1, theta=theta)
    _, end = propagate_interval(TriangularVector.point_mass(K), op, t, M)
    marg = end.arrival_marginal()
    for k in range(K):
        want = poisson_pmf(lam * t, k) * float(sp_poisson.cdf(M - k, (theta - lam) * t))
        assert math.isclose(marg[k], want, rel_tol=1e-12)


def test_snapshots_monotone_in_series_length():
    rng = np.random.default_rng(31)
    p = random_state(5, rng)
    op = IntervalOperator.for_rates(lam=1.3, mu=0.7, c=2)
    ends = [
        propagate_interval(p, op, 1.0, M)[1].entries for M in (3, 6, 12, 40)
    ]
    for lo, hi in zip(ends, ends[1:]):
        assert (hi - lo).min() >= -1e-16


def test_propagate_validation():
    p = TriangularVector.point_mass(2)
    op = IntervalOperator.for_rates(lam=1.0, mu=1.0, c=1)
    with pytest.raises(ValueError):
        propagate_interval(p, op, 0.0, 5)
    with pytest.raises(ValueError):
        propagate_interval(p, op, 1.0, -1)
    with pytest.raises(ValueError):
        propagate_interval(p, op, 1.0, 5, query_offsets=[1.5])
    with pytest.raises(ValueError):
        propagate_interval(p, op, 1.0, 5, query_offsets=[0.0])


# ---------------------------------------------------------------------------
# full-horizon propagation against independent integrators


def tiny_spec() -> ModelSpec:
    pdf = PiecewisePdf(breakpoints=(0.0, 1.0, 2.5, 4.0), levels=(0.4, 0.25, 0.15))
    return ModelSpec(pdf=pdf, K=4, c=2, mu=1.1, alpha=6.0, epsilon=1e-12)


def test_run_horizon_matches_dense_matrix_exponential():
    spec = tiny_spec()
    plan = build_truncation_plan(spec)
    ts = [0.6, 1.0, 1.7, 3.2, 4.0]
    states = run_horizon(spec, plan, ts)
    for t, state in states:
        want = oracles.dense_horizon_pmf(spec.pdf, spec.alpha, spec.mu, spec.c, spec.K, t)
        assert np.abs(state.entries - want).max() < 1e-10


def test_run_horizon_matches_adaptive_ode():
    spec = ModelSpec(
        pdf=PiecewisePdf.uniform(2.0), K=2, c=1, mu=0.8, alpha=2.5, epsilon=1e-12
    )
    plan = build_truncation_plan(spec)
    for t, state in run_horizon(spec, plan, [0.6, 1.4, 2.0]):
        want = oracles.ode_horizon_pmf(spec.pdf, spec.alpha, spec.mu, spec.c, spec.K, t)
        assert np.abs(state.entries - want).max() < 1e-8


def test_arrival_marginal_sandwich():
    # truncation only removes mass: the marginal sits between the exact
    # Poisson value and the per-interval retention bound compounded so far
    pdf = PiecewisePdf(breakpoints=(0.0, 2.0, 5.0, 9.0, 10.0), levels=(0.2, 0.1, 0.06, 0.06))
    spec = ModelSpec(pdf=pdf, K=16, c=2, mu=0.9, alpha=16.0, epsilon=1e-3)
    plan = build_truncation_plan(spec)
    queries = [(1.5, 1), (4.0, 2), (8.0, 3), (10.0, 4)]
    states = run_horizon(spec, plan, [t for t, _ in queries])
    floor = plan.per_interval_target
    for (t, state), (_, n) in zip(states, queries):
        lam_t = cumulative_intensity(pdf, spec.alpha, 0.0, t)
        marg = state.arrival_marginal()
        for k in range(spec.K + 1):
            exact = poisson_pmf(lam_t, k)
            if exact < 1e-250:
                continue
            assert marg[k] <= exact * (1.0 + 1e-12)
            assert marg[k] > floor**n * exact


def test_arrival_marginal_approaches_poisson_with_longer_series():
    spec = ModelSpec(
        pdf=PiecewisePdf(breakpoints=(0.0, 1.0, 3.0), levels=(0.55, 0.225)),
        K=8, c=2, mu=1.4, alpha=8.0, epsilon=1e-14,
    )
    base = build_truncation_plan(spec)
    plan = base.__class__(
        thetas=base.thetas,
        trunc_points=tuple(m + 200 for m in base.trunc_points),
        per_interval_target=base.per_interval_target,
        K=base.K,
    )
    for t in (0.7, 1.0, 2.2, 3.0):
        (_, state), = run_horizon(spec, plan, [t])
        lam_t = cumulative_intensity(spec.pdf, spec.alpha, 0.0, t)
        marg = state.arrival_marginal()
        for k in range(spec.K + 1):
            assert abs(marg[k] - poisson_pmf(lam_t, k)) < 1e-12


def test_state_is_continuous_at_zero():
    spec = reference_spec(K=50)
    plan = build_truncation_plan(spec)
    (_, state), = run_horizon(spec, plan, [1e-9])
    assert state.get(0, 0) >= 1.0 - 1e-5


def test_retained_mass_tracks_arrival_truncation():
    spec = reference_spec(K=60, alpha=60.0)
    plan = build_truncation_plan(spec)
    states = run_horizon(spec, plan, [10.0, 300.0])
    # early on nothing has reached row K, so series truncation is the only loss
    assert states[0][1].total_mass() >= plan.per_interval_target * (1.0 - 1e-15)
    # at the horizon the top-row leak has removed exactly the auxiliary
    # arrivals beyond K, leaving the Poisson cdf at K minus the series loss
    lam_full = cumulative_intensity(spec.pdf, spec.alpha, 0.0, 300.0)
    want = float(sp_poisson.cdf(spec.K, lam_full))
    got = states[1][1].total_mass()
    assert got <= want * (1.0 + 1e-12)
    assert got >= want * (1.0 - 1e-12) - spec.epsilon


def test_breakpoint_query_equals_interval_endpoint():
    spec = tiny_spec()
    plan = build_truncation_plan(spec)
    (_, via_query), = run_horizon(spec, plan, [1.0])
    op = IntervalOperator(
        lam=spec.alpha * spec.pdf.levels[0], mu=spec.mu, c=spec.c, theta=plan.thetas[0]
    )
    _, end = propagate_interval(
        TriangularVector.point_mass(spec.K), op, 1.0, plan.trunc_points[0]
    )
    assert np.array_equal(via_query.entries, end.entries)


def test_duplicate_queries_are_answered_once_each():
    spec = tiny_spec()
    plan = build_truncation_plan(spec)
    states = run_horizon(spec, plan, [2.0, 2.0])
    assert len(states) == 2
    assert states[0][1] is states[1][1]


def test_post_horizon_drain_reduces_arrivals_in_system():
    spec = reference_spec(K=20, alpha=20.0, t_max=400.0)
    plan = build_truncation_plan(spec, include_post_horizon=True)
    states = dict(run_horizon(spec, plan, [300.0, 360.0]))
    lengths = {
        t: sum((k - j) * s.get(k, j) for k in range(21) for j in range(k + 1))
        for t, s in states.items()
    }
    assert lengths[360.0] < lengths[300.0] * 0.75


def test_run_horizon_rejects_mismatched_plan():
    spec = tiny_spec()
    plan = build_truncation_plan(spec)
    other = ModelSpec(
        pdf=spec.pdf, K=5, c=spec.c, mu=spec.mu, alpha=spec.alpha, epsilon=spec.epsilon
    )
    with pytest.raises(ConfigurationError):
        run_horizon(other, plan, [1.0])
    shifted = ModelSpec(
        pdf=spec.pdf, K=spec.K, c=spec.c, mu=spec.mu, alpha=7.5, epsilon=spec.epsilon
    )
    with pytest.raises(ConfigurationError):
        run_horizon(shifted, plan, [1.0])


def test_run_horizon_rejects_bad_query_times():
    spec = tiny_spec()
    plan = build_truncation_plan(spec)
    with pytest.raises(ValueError):
        run_horizon(spec, plan, [0.0])
    with pytest.raises(ConfigurationError):
        run_horizon(spec, plan, [4.5])  # past horizon, no post-horizon plan
    assert run_horizon(spec, plan, []) == []
