import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from robustpo import estimators as est
from robustpo.adversary import CorrelationSpec, dual_solution, feasibility_check, robust_stats, robust_value, worst_case_reward
from robustpo.oracle import analytic_inner_min, sample_feasible_rewards

from conftest import occ

seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(3, 12)
rs = st.floats(0.05, 0.95)


def triple(seed, k):
    rng = np.random.default_rng(seed)
    ref = occ(rng.dirichlet(np.ones(k)))
    pi = occ(rng.dirichlet(np.full(k, float(rng.uniform(0.2, 3.0)))))
    raw = rng.normal(size=(1, k))
    return pi, ref, est.normalize_proxy(raw, est.proxy_moments_exact(ref, raw))


@given(seeds, sizes)
def test_chi_squared_dominates_squared_mean(seed, k):
    pi, ref, proxy = triple(seed, k)
    s = robust_stats(pi, ref, proxy)
    assert s.chi2 - s.proxy_mean_pi**2 >= -1e-12
    assert s.h >= 0.0


@given(seeds, sizes)
def test_ratio_has_unit_reference_mean(seed, k):
    pi, ref, _ = triple(seed, k)
    assert float(np.sum(ref.mass * est.ratio_exact(pi, ref).ratio())) == pytest.approx(1.0, abs=1e-12)


@given(seeds, sizes, st.floats(-50, 50))
def test_normalisation_is_shift_invariant(seed, k, c):
    _, ref, _ = triple(seed, k)
    raw = np.random.default_rng(seed).normal(size=(1, k))
    a = est.normalize_proxy(raw, est.proxy_moments_exact(ref, raw))
    b = est.normalize_proxy(raw + c, est.proxy_moments_exact(ref, raw + c))
    np.testing.assert_allclose(a, b, atol=1e-8)


@given(seeds, sizes, rs, st.floats(-3, 3), st.floats(0.1, 4))
def test_closed_form_matches_sphere_projection(seed, k, r, m, v):
    pi, ref, proxy = triple(seed, k)
    spec = CorrelationSpec(r, m, v)
    closed = robust_value(robust_stats(pi, ref, proxy), spec)
    assert abs(closed - analytic_inner_min(pi.mass, ref.mass, proxy, r, m, v)) < 1e-8 * max(1.0, abs(closed))
    base = robust_value(robust_stats(pi, ref, proxy), CorrelationSpec(r))
    assert math.isclose(closed, v * base + m, rel_tol=1e-12, abs_tol=1e-12)


@given(seeds, sizes, rs)
def test_worst_case_reward_is_feasible_and_attains_value(seed, k, r):
    pi, ref, proxy = triple(seed, k)
    s = robust_stats(pi, ref, proxy)
    assume(not s.degenerate)
    spec = CorrelationSpec(r)
    reward = worst_case_reward(est.ratio_exact(pi, ref), proxy, dual_solution(s, spec), spec)
    assert feasibility_check(reward, ref, proxy, spec).passed
    assert abs(float(np.sum(pi.mass * np.ma.getdata(reward))) - robust_value(s, spec)) < 1e-8


@given(seeds, sizes, rs)
def test_sampled_rewards_never_beat_the_minimum(seed, k, r):
    pi, ref, proxy = triple(seed, k)
    spec = CorrelationSpec(r)
    value = robust_value(robust_stats(pi, ref, proxy), spec)
    rewards = sample_feasible_rewards(ref.mass, proxy, r, 200, seed)
    assert np.einsum("nsa,sa->n", rewards, pi.mass).min() >= value - 1e-10


@given(seeds, sizes)
def test_robust_value_nondecreasing_in_r_when_proxy_gain_positive(seed, k):
    pi, ref, proxy = triple(seed, k)
    s = robust_stats(pi, ref, proxy)
    assume(s.proxy_mean_pi > 0)
    vals = [robust_value(s, CorrelationSpec(r)) for r in np.linspace(0.05, 1.0, 20)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
