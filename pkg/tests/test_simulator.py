import math

import numpy as np
import pytest

import oracles
from ctbpqueue.arrival import ModelSpec, PiecewisePdf, sample_arrival_times
from ctbpqueue.presets import reference_pdf, reference_spec
from ctbpqueue.simulate import (
    EmpiricalDistribution,
    SamplePath,
    mtmc_transient,
    sample_nhpp_arrival_times,
    simulate_ctbp,
    simulate_nhpp,
    tv_distance,
)

TINY_PDF = PiecewisePdf(breakpoints=(0.0, 1.0, 2.5, 4.0), levels=(0.4, 0.25, 0.15))


# ---------------------------------------------------------------------------
# containers and helpers


def test_sample_path_validation():
    with pytest.raises(ValueError):
        SamplePath(np.array([1.0, 0.5]), np.array([1, -1], dtype=np.int8))
    with pytest.raises(ValueError):
        SamplePath(np.array([0.5, 1.0]), np.array([1, 2], dtype=np.int8))
    with pytest.raises(ValueError):
        SamplePath(np.array([0.5, 1.0]), np.array([1], dtype=np.int8))


def test_empirical_distribution_validation():
    with pytest.raises(ValueError):
        EmpiricalDistribution((1.0,), np.array([[3, 4]]), reps=8)
    with pytest.raises(ValueError):
        EmpiricalDistribution((1.0, 2.0), np.array([[3, 4]]), reps=7)
    e = EmpiricalDistribution((1.0,), np.array([[3, 5]]), reps=8)
    assert np.allclose(e.pmf(0), [0.375, 0.625])


def test_tv_distance_basics():
    assert tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert tv_distance(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0
    # zero-padding handles ragged lengths
    assert math.isclose(
        tv_distance(np.array([1.0]), np.array([0.5, 0.5])), 0.5, rel_tol=1e-15
    )


# ---------------------------------------------------------------------------
# fixed-population simulator


def test_simulation_is_deterministic_per_seed():
    spec = reference_spec(K=8, alpha=8.0)
    a, _ = simulate_ctbp(spec, [100.0, 200.0], reps=200, seed=9)
    b, _ = simulate_ctbp(spec, [100.0, 200.0], reps=200, seed=9)
    assert np.array_equal(a.counts, b.counts)
    c, _ = simulate_ctbp(spec, [100.0, 200.0], reps=200, seed=10)
    assert not np.array_equal(a.counts, c.counts)


def test_simulated_paths_are_wellformed():
    spec = ModelSpec(pdf=TINY_PDF, K=6, c=2, mu=1.1, alpha=6.0, epsilon=1e-12)
    _, paths = simulate_ctbp(spec, [2.0], reps=5, seed=4, store_paths=5)
    assert len(paths) == 5
    for p in paths:
        assert p.n_arrivals == 6
        assert np.sum(p.kinds == -1) == 6  # everyone eventually leaves
        running = np.cumsum(p.kinds)
        assert running.min() >= 0  # never more departures than arrivals
        assert p.queue_length(1e12) == 0
        arr = p.times[p.kinds == 1]
        assert arr.min() > 0.0 and arr.max() <= TINY_PDF.horizon


def test_simulate_validation():
    spec = reference_spec(K=5, alpha=5.0)
    with pytest.raises(ValueError):
        simulate_ctbp(spec, [], reps=10, seed=1)
    with pytest.raises(ValueError):
        simulate_ctbp(spec, [0.0], reps=10, seed=1)
    with pytest.raises(ValueError):
        simulate_ctbp(spec, [1.0], reps=0, seed=1)
    with pytest.raises(ValueError):
        simulate_ctbp(spec, [1.0], reps=10, seed=-1)


def test_ample_servers_match_binomial_occupancy():
    spec = ModelSpec(pdf=TINY_PDF, K=20, c=20, mu=0.9, alpha=20.0, epsilon=1e-12)
    reps = 20_000
    emp, _ = simulate_ctbp(spec, [1.7], reps=reps, seed=33)
    p = oracles.presence_probability(TINY_PDF, 0.9, 1.7)
    want = np.array([oracles.mp_binomial_pmf(20, p, ell) for ell in range(21)])
    got = emp.pmf(0)
    se = np.sqrt(want * (1.0 - want) / reps)
    assert np.all(np.abs(got - want) <= 3.5 * se + 1e-4)
    assert tv_distance(got, want) < 0.02


def test_instant_service_empties_queue():
    spec = reference_spec(K=10, alpha=10.0, mu=1e6)
    emp, _ = simulate_ctbp(spec, [150.0], reps=500, seed=2)
    assert emp.pmf(0)[0] >= 0.99


def test_fixed_population_counts_are_underdispersed_and_anticorrelated():
    # split the K draws at an interior time: the halves are anti-correlated
    # and the first-half count is binomial (variance below Poisson), while
    # the matched-intensity Poisson process shows neither effect
    pdf = reference_pdf()
    t_split, reps, K = 150.0, 2000, 50
    g = np.random.default_rng(77)
    a_ct = np.empty(reps)
    a_nh = np.empty(reps)
    b_nh = np.empty(reps)
    for r in range(reps):
        a_ct[r] = (sample_arrival_times(pdf, K, g) <= t_split).sum()
        nt = sample_nhpp_arrival_times(pdf, float(K), g)
        a_nh[r] = (nt <= t_split).sum()
        b_nh[r] = (nt > t_split).sum()
    assert a_ct.var() < 0.5 * a_nh.var()

    b_ct = K - a_ct  # the remainder arrives after t, exactly
    d_ct = (a_ct - a_ct.mean()) * (b_ct - b_ct.mean())
    se_ct = d_ct.std() / math.sqrt(reps)
    assert d_ct.mean() < -3.0 * se_ct

    d_nh = (a_nh - a_nh.mean()) * (b_nh - b_nh.mean())
    se_nh = d_nh.std() / math.sqrt(reps)
    assert abs(d_nh.mean()) < 4.0 * se_nh  # independent increments


# ---------------------------------------------------------------------------
# Poisson-arrival twin


def test_nhpp_total_count_is_poisson_with_mean_k():
    reps, K = 2000, 10
    pdf = reference_pdf()
    g = np.random.default_rng(5)
    totals = np.array([sample_nhpp_arrival_times(pdf, float(K), g).size for _ in range(reps)])
    se = math.sqrt(K / reps)
    assert abs(totals.mean() - K) < 4.0 * se


def test_thinning_skips_zero_density_regions():
    pdf = PiecewisePdf(breakpoints=(0.0, 1.0, 2.0), levels=(1.0, 0.0))
    g = np.random.default_rng(8)
    for _ in range(50):
        t = sample_nhpp_arrival_times(pdf, 4.0, g)
        assert t.size == 0 or t.max() <= 1.0


def test_nhpp_sampler_validation_and_seeding():
    pdf = PiecewisePdf.uniform(1.0)
    with pytest.raises(ValueError):
        sample_nhpp_arrival_times(pdf, 0.0, 1)
    a = sample_nhpp_arrival_times(pdf, 5.0, 123)
    b = sample_nhpp_arrival_times(pdf, 5.0, 123)
    assert np.array_equal(a, b)  # plain ints are accepted as seeds


def test_simulate_nhpp_histogram_grows_past_k():
    # rate 60*f with one slow server backs the queue up well beyond K + 6*sqrt(K)
    spec = ModelSpec(pdf=TINY_PDF, K=60, c=1, mu=0.05, alpha=60.0, epsilon=1e-12)
    emp, _ = simulate_nhpp(spec, [4.0], reps=30, seed=3)
    assert emp.counts.shape[1] >= 62
    assert emp.counts.sum() == 30


# ---------------------------------------------------------------------------
# Markovian comparison chain


def mm1_spec() -> ModelSpec:
    return ModelSpec(
        pdf=PiecewisePdf.uniform(1.0), K=1, c=1, mu=2.0, alpha=1.0, epsilon=1e-12
    )


MM1_HEAD = (
    0.6337953737589262,  # p_0 at t = 1 for constant rate 1, service rate 2
    0.2572818272578888,
    0.0824007312695469,
    0.0211368497415083,
)


def test_mtmc_matches_mm1_series():
    (d,) = mtmc_transient(mm1_spec(), [1.0])
    for n, want in enumerate(MM1_HEAD):
        assert math.isclose(d.probs[n], want, rel_tol=1e-12)
    for n in range(9):
        assert abs(d.probs[n] - oracles.mm1_transient_pmf(1.0, 2.0, 1.0, n)) < 1e-9
    assert d.mass_defect < 5e-12


def test_mtmc_starts_empty():
    (d,) = mtmc_transient(mm1_spec(), [1e-9])
    assert d.probs[0] >= 1.0 - 1e-6


def test_mtmc_drains_when_arrivals_stop():
    spec = ModelSpec(
        pdf=PiecewisePdf(breakpoints=(0.0, 1.0, 2.0), levels=(1.0, 0.0)),
        K=3, c=1, mu=1.5, alpha=3.0, epsilon=1e-12,
    )
    d1, d2 = mtmc_transient(spec, [1.0, 2.0])
    assert d2.mean() < d1.mean()


def test_mtmc_validation():
    spec = mm1_spec()
    assert mtmc_transient(spec, []) == []
    with pytest.raises(ValueError):
        mtmc_transient(spec, [0.0])
    with pytest.raises(ValueError):
        mtmc_transient(spec, [1.5])  # past the arrival horizon
